"""Build the optional compiled kernels; the package falls back to NumPy without them."""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "switchgrid._ckernels",
                ["src/switchgrid/_ckernels.pyx"],
                # keep a*b + c as two roundings so both backends agree bitwise
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
