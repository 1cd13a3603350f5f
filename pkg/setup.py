import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled core must not use FMA contraction or value-changing FP
# optimizations: the whole artifact depends on a pinned f32 accumulation
# order that is identical between this extension and the pure-Python
# fallback backend.
STRICT_FP_FLAGS = [
    "-O3",
    "-ffp-contract=off",
    "-fno-fast-math",
    "-fno-unsafe-math-optimizations",
]

ext_modules = []
if cythonize is not None and os.environ.get("CONDENSATE_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "condensate._ckern",
                ["src/condensate/_ckern.pyx"],
                extra_compile_args=STRICT_FP_FLAGS,
                optional=True,
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
