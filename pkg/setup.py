"""Build script for the optional compiled kernels.

The package is pure Python plus one optional Cython extension holding the
sparse-matrix hot loops (quadheom._kernels).  If the extension cannot be
built (no compiler, no OpenMP) the install still succeeds and the package
falls back to the scipy implementations at import time.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build-time only
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "quadheom._kernels",
        ["src/quadheom/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        optional=True,  # fall back to scipy kernels if the build fails
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
