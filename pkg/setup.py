"""Build script: compiles the optional Cython integrator kernel.

The package works without the extension (a pure-Python kernel is selected
at import time), so any failure here degrades to the fallback instead of
aborting the install.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "leafscope._kernels._geodesic",
        ["src/leafscope/_kernels/_geodesic.pyx"],
        include_dirs=[numpy.get_include()],
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # noqa: BLE001 - any build problem means "no extension"
    print(f"leafscope: skipping Cython kernel build ({exc}); "
          "pure-Python fallback will be used")

setup(ext_modules=ext_modules)
