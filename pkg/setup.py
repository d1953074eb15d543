from Cython.Build import cythonize
from setuptools import Extension, setup

# -ffp-contract=off keeps a*b+c as two roundings so the compiled kernels agree
# bit-for-bit with the numpy fallback; never add -ffast-math here.
extensions = [
    Extension(
        "neuralgpu._conv_kernels",
        ["src/neuralgpu/_conv_kernels.pyx"],
        include_dirs=["src/neuralgpu"],
        extra_compile_args=["-O3", "-march=native", "-ffp-contract=off"],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
