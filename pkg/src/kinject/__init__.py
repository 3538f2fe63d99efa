"""Knowledge-injected radiology report generation at desk scale.

Weighted concept knowledge (TF-IDF re-weighted clinical concepts) and
retrieved-report triplet knowledge are fused into image features by residual
cross-attention, then decoded by a small transformer.
"""
from kinject.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
