import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled conv kernels are optional: cflab.kernels falls back to the
# numpy implementation when the extension is missing.
extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "cflab._conv_kernels",
                ["src/cflab/_conv_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=extensions)
