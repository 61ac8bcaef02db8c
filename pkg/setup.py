"""Build the optional compiled kernels.

The package works without them: ``qnetstack.kernels`` falls back to the
numpy implementation when ``qnetstack._ckernels`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("QNETSTACK_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "qnetstack._ckernels",
                    ["src/qnetstack/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:  # no cython/numpy at build time: pure-Python install
        ext_modules = []

setup(ext_modules=ext_modules)
