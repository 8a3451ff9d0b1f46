"""Build script for the optional compiled stage-assignment kernel.

The package works without the extension (a numpy fallback is selected at
import time); set TIMECAST_SKIP_NATIVE=1 to install pure-Python only.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("TIMECAST_SKIP_NATIVE"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "timecast._dp_native",
                    ["src/timecast/_dp_native.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "language_level": 3,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
