"""Build script: compiles the optional Cython rollout kernel.

The package works without the extension (a numpy fallback is selected at
import time), so any failure here degrades to a pure-Python install.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/neuroreach/odenet/_core.pyx"],
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [numpy.get_include()]
except Exception:
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
