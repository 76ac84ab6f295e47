import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; pillarforge.kernels falls back
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "pillarforge._ckernels",
                sources=["src/pillarforge/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-fno-builtin-sin", "-fno-builtin-cos", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
