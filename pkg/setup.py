import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RRSGD_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "rrsgd._core",
                    ["src/rrsgd/_core.pyx"],
                    include_dirs=[np.get_include(), "src/rrsgd"],
                    # no -ffast-math: draws must stay reproducible
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
