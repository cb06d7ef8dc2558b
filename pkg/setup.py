"""Build the optional Cython kernels; the package falls back to NumPy without them."""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ATTNQP_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "attnqp._kernels",
                    ["src/attnqp/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    language="c++",
                    # no -ffast-math: compensated summation relies on strict IEEE ordering
                    extra_compile_args=["-O3", "-march=native"],
                )
            ],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
