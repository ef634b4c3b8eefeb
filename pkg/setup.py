"""Build script for the optional compiled filter-bank kernel.

Without Cython or a C compiler the package installs as pure Python and
``immkit.engine`` falls back to the step functions at import time.
"""
import os

from setuptools import setup


def _extensions():
    if os.environ.get("IMMKIT_PURE_PYTHON"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "immkit._kernel",
        ["src/immkit/_kernel.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
