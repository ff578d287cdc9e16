from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "ethcast.autotensor._ckernels",
                ["src/ethcast/autotensor/_ckernels.pyx"],
                include_dirs=["src/ethcast/autotensor"],
                depends=[
                    "src/ethcast/autotensor/_ckernels_impl.h",
                    "src/ethcast/autotensor/_ckernels_body.h",
                ],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
