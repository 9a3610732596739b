"""Build script: compiles the optional Cython kernel extension.

The extension is a pure speedup; if it fails to build (no compiler, no
Cython), the package installs anyway and falls back to the pure-Python
kernels at import time.
"""

from setuptools import setup, Extension

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "quadswarm.kernels._core",
                ["src/quadswarm/kernels/_core.pyx"],
                # no FMA contraction and no sincos fusion: keeps results
                # bit-identical to the pure-Python kernels
                extra_compile_args=[
                    "-ffp-contract=off",
                    "-fno-builtin-sin",
                    "-fno-builtin-cos",
                    "-fno-builtin-sincos",
                ],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
