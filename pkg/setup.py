"""Build script for the optional compiled episode kernel.

The package works without the extension (a pure NumPy fallback is selected at
import time), so a missing compiler or Cython only costs speed, not features.
"""

import os

import numpy
from setuptools import Extension, setup

KERNEL_SRC = os.path.join("src", "fliplab", "backends", "_ckernel.pyx")

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None and os.path.exists(KERNEL_SRC):
    extensions = cythonize(
        [
            Extension(
                "fliplab.backends._ckernel",
                [KERNEL_SRC],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
else:
    extensions = []

setup(ext_modules=extensions)
