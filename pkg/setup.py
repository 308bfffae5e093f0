"""Build hook for the optional compiled kernel.

The package works without it: ``brakechords._backend`` falls back to the
numpy implementation when the extension is missing or fails to build.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Keep going when a compiler or Cython is unavailable."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernel not built ({exc}); using the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); using the numpy fallback")


def extensions():
    if os.environ.get("BRAKECHORDS_NO_EXTENSION"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "brakechords._ckernel",
        ["src/brakechords/_ckernel.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    try:
        return cythonize([ext], compiler_directives={"language_level": 3}, quiet=True)
    except Exception as exc:  # noqa: BLE001
        print(f"warning: cythonize failed ({exc}); using the numpy fallback")
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
