import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled dip kernel is optional: patchnas falls back to the pure
# numpy implementation when the extension is unavailable.
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "patchnas._dipcore",
                ["src/patchnas/_dipcore.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
