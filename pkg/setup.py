import os

from setuptools import setup

ext_modules = []
if not os.environ.get("EVSM_SKIP_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/evsm/_kernels.pyx"],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # Pure-python kernel lane still works without the extension.
        ext_modules = []

setup(ext_modules=ext_modules)
