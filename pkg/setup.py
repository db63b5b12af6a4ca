"""Build script for the optional compiled scan kernel.

The package is fully functional without the extension: privsense.leakscan
falls back to a pure-Python scanner when `privsense._scan` is missing.
A failed compile therefore downgrades the install instead of breaking it.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            warnings.warn(f"skipping compiled scan kernel: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"skipping {ext.name}: {exc}")


try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("privsense._scan", ["src/privsense/_scan.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
