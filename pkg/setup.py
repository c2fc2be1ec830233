import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: install the pure-Python package only
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("TENTACLE_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "tentacle.kernels._core",
                ["src/tentacle/kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # strict IEEE arithmetic keeps runs reproducible
                extra_compile_args=["-O3", "-fno-fast-math", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
