"""Build the optional compiled kernels; the package works without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PILOTKIT_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("pilotkit.kernels._speedups", ["src/pilotkit/kernels/_speedups.pyx"],
                       extra_compile_args=["-O3", "-ffp-contract=off"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
