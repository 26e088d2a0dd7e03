import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

compile_args = ["-O3", "-fno-math-errno", "-fno-trapping-math"]
if os.environ.get("CDVAE_NATIVE", "1") == "1":
    compile_args.append("-march=native")

extensions = [
    Extension(
        "cdvae._ckernels",
        ["src/cdvae/_ckernels.pyx"],
        depends=["src/cdvae/_adam.h"],
        include_dirs=[np.get_include(), "src/cdvae"],
        extra_compile_args=compile_args,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
