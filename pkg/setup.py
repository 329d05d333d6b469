import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("EPICAL_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install; epical.kernels falls back
        cythonize = None

    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "epical._kernels",
                    ["src/epical/_kernels.pyx"],
                    # no FMA contraction: keeps results identical to the Python fallback
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
