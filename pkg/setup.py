"""Build hook for the optional compiled stepping core.

The package works without the extension (a pure numpy fallback is selected
at import time); the build therefore degrades to pure python instead of
failing when no compiler or Cython is available.
"""

import sys

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"semimarkov: skipping compiled core ({exc})", file=sys.stderr)
        return []
    ext = Extension(
        "semimarkov._core",
        ["src/semimarkov/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=_extensions())
