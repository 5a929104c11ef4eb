import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("RWRANGE_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:  # fall back to the pure-Python kernels
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "rwrange._kernels",
                    ["src/rwrange/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3", "embedsignature": True},
        )

setup(ext_modules=ext_modules)
