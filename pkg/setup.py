import platform
import sys

from setuptools import Extension, setup

# Fast-math lets GCC call the glibc vector math library for exp(); the
# kernels clamp their arguments so no infinities or NaNs are produced.
if sys.platform.startswith("linux") and platform.machine() in ("x86_64", "AMD64"):
    compile_args = ["-O3", "-ffast-math"]
    link_args = ["-lmvec"]
else:
    compile_args = ["-O3", "-fno-math-errno"]
    link_args = []

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "srnn._ckernels",
                ["src/srnn/_ckernels.pyx"],
                extra_compile_args=compile_args,
                extra_link_args=link_args,
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
