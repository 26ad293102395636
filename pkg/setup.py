"""Build script: compiles the optional fast kernels when Cython and a C
compiler are available.  The package works without them (pure-numpy
fallbacks are selected at import time); the compiled core mainly matters
for the 2^30-draw Monte-Carlo tail runs and dense Remez grid scans.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "slotnet._kernels._core",
                ["src/slotnet/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError as exc:  # Cython or numpy missing at build time
    print(f"slotnet: building without compiled kernels ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
