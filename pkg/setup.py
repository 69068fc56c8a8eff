import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# no fast-math: the compiled kernel must match the Python reference bit for bit
ext = Extension(
    "netforge.abm._kernel",
    ["src/netforge/abm/_kernel.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O2", "-ffp-contract=off"],
)

setup(ext_modules=cythonize([ext], language_level=3))
