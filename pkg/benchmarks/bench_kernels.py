"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Both backends are imported directly, so the comparison does not depend on
KINJECT_PURE_PYTHON. Outputs are also checked for agreement.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from kinject import _pykernels

try:
    from kinject import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x = rng.normal(size=(64, 512))
    g = rng.normal(size=(64, 512))
    y = _pykernels.softmax_rows(x)
    xhat, inv = _pykernels.layer_norm_rows(x, 1e-5)
    mat = rng.normal(size=(5000, 64))
    q = rng.normal(size=64)
    a = rng.integers(0, 30, size=60).astype(np.int64)
    b = rng.integers(0, 30, size=60).astype(np.int64)
    return {
        "softmax_rows 64x512": ("softmax_rows", (x,)),
        "softmax_rows_backward 64x512": ("softmax_rows_backward", (y, g)),
        "layer_norm_rows 64x512": ("layer_norm_rows", (x, 1e-5)),
        "layer_norm_rows_backward 64x512": ("layer_norm_rows_backward", (xhat, inv, g)),
        "row_dots 5000x64": ("row_dots", (mat, q)),
        "lcs_length 60x60": ("lcs_length", (a, b)),
    }


def agree(u, v):
    if isinstance(u, tuple):
        return all(agree(p, r) for p, r in zip(u, v))
    return bool(np.allclose(u, v, rtol=1e-12, atol=1e-12))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install --no-build-isolation -e .`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':34s} {'python us':>11s} {'cython us':>11s} {'speedup':>8s}  agree")
    for label, (name, inputs) in cases(rng).items():
        py, cy = getattr(_pykernels, name), getattr(_ckernels, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=args.repeat, repeat=3)) / args.repeat
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=args.repeat, repeat=3)) / args.repeat
        ok = agree(py(*inputs), cy(*inputs))
        rows.append({"kernel": label, "python_s": t_py, "cython_s": t_cy, "speedup": t_py / t_cy, "agree": ok})
        print(f"{label:34s} {t_py * 1e6:11.1f} {t_cy * 1e6:11.1f} {t_py / t_cy:8.2f}  {ok}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0 if all(r["agree"] for r in rows) else 2


if __name__ == "__main__":
    sys.exit(main())
