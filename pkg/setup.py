"""Build the optional Cython kernels.

The package imports and runs without them; ``subgns.kernels`` falls back to
the numpy implementations when the extension is missing.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SGNS_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        extensions = [
            Extension(
                "subgns.kernels._ckernels",
                ["src/subgns/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
