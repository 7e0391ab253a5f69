import os

from setuptools import Extension, setup

ext_modules = []
pyx = os.path.join("src", "deepes", "nn", "_fastpath.pyx")
if os.path.exists(pyx):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext = Extension(
            "deepes.nn._fastpath",
            sources=[pyx],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            optional=True,  # pure-python fallback is selected at import
        )
        ext_modules = cythonize([ext], language_level=3)
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
