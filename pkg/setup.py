"""Build script: compiles the optional raster kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile downgrades to a warning instead of
aborting the install.
"""

import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    # -ffp-contract=off: the numpy fallback must produce bit-identical
    # rasters, so FMA contraction has to stay disabled in the C code.
    ext_modules = cythonize(
        [
            Extension(
                "polyseq._kernels._ckernels",
                ["src/polyseq/_kernels/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError as exc:  # pragma: no cover - build environment dependent
    print(f"polyseq: skipping compiled kernels ({exc}); numpy fallback will be used", file=sys.stderr)
    ext_modules = []

setup(ext_modules=ext_modules)
