"""Build script for the optional compiled kernels.

The Cython extension is skipped when Cython or a C compiler is missing;
``kinject.kernels`` then falls back to the pure-Python implementations.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("KINJECT_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "kinject._ckernels",
                    ["src/kinject/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
