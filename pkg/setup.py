"""Build the optional compiled kernels.

If Cython or a C compiler is missing the package still installs; the numpy
kernels are used at import time instead.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SKELFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "skelflow.tensor._kernels",
                    ["src/skelflow/tensor/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
