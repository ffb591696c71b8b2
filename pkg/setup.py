"""Build script: compiles the optional Cython kernel extension.

If no C compiler is available the build falls back to the pure-Python
kernels (selected at import time in ergostab.kernels).
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise continue without it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing or broken
            sys.stderr.write(f"warning: C kernel build skipped ({exc}); "
                             "pure-Python kernels will be used\n")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(f"warning: building {ext.name} failed ({exc}); "
                             "pure-Python kernels will be used\n")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [Extension("ergostab._speedups", ["src/ergostab/_speedups.pyx"])],
        compiler_directives={"language_level": "3"},
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
