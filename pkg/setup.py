"""Build script for the compiled MLP kernel.

The package works without the extension (a numpy fallback is selected at
import time), so compilation failures are downgraded to a warning rather
than aborting the install.
"""

import warnings

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rtchunk._kernels._fastmlp",
                ["src/rtchunk/_kernels/_fastmlp.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    warnings.warn(f"building without compiled kernel: {exc}")

setup(ext_modules=ext_modules)
