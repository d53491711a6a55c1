"""Builds the optional compiled kernel core.

The package is fully functional without the extension (a pure-Python kernel
set is selected at import time); set SPARSE_MLP_NO_EXT=1 to skip compilation
deliberately, e.g. on a machine without a C toolchain.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("SPARSE_MLP_NO_EXT") == "1":
        return []
    from Cython.Build import cythonize

    ext = Extension(
        "sparse_mlp._core",
        ["src/sparse_mlp/_core.pyx"],
        # no -ffast-math, no FMA contraction: results must stay bitwise-identical
        # to the pure-Python kernels
        extra_compile_args=["-O2", "-ffp-contract=off"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(ext_modules=extensions())
