"""Build script: compiles the optional Cython kernel.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a failed compile only costs speed.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler etc.
            print(f"warning: extension build skipped ({exc}); "
                  "falling back to the pure-python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to the pure-python kernels")


extensions = []
try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [Extension("gexpect._core", ["src/gexpect/_core.pyx"],
                   include_dirs=[np.get_include()])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    print("warning: Cython or numpy missing at build time; "
          "installing without compiled kernels")

setup(ext_modules=extensions, cmdclass={"build_ext": optional_build_ext})
