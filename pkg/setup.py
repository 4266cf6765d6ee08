"""Build script for the optional compiled kernel core.

The package is fully functional without the extension; the kernel layer
falls back to a pure numpy implementation when the compiled module is
absent (see farsign._kernels).
"""

import os

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    # random_standard_normal lives in numpy's static distributions library
    npyrandom_dir = os.path.join(os.path.dirname(numpy.random.__file__), "lib")
    ext_modules = cythonize(
        [
            Extension(
                "farsign._kernels._core",
                ["src/farsign/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                library_dirs=[npyrandom_dir],
                libraries=["npyrandom"],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
