"""CMake-driven build of the _epmc extension plus the epmc package.

Use `pip install -e . --no-build-isolation` for a development install.
"""

import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext: CMakeExtension) -> None:
        import pybind11

        source_dir = Path(__file__).parent.resolve()
        build_dir = Path(self.build_temp) / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)
        out_dir = Path(self.get_ext_fullpath(ext.name)).parent.resolve() / "epmc"
        out_dir.mkdir(parents=True, exist_ok=True)

        cfg = [
            "cmake",
            str(source_dir),
            "-DEPMC_BUILD_TESTS=OFF",
            "-DEPMC_BUILD_PYTHON=ON",
            "-DCMAKE_BUILD_TYPE=Release",
            f"-Dpybind11_DIR={pybind11.get_cmake_dir()}",
            f"-DPYTHON_EXECUTABLE={sys.executable}",
        ]
        subprocess.run(cfg, cwd=build_dir, check=True)
        subprocess.run(["cmake", "--build", ".", "--target", "_epmc", "-j"],
                       cwd=build_dir, check=True)

        built = list((build_dir / "python" / "epmc").glob("_epmc*.so"))
        if not built:
            raise RuntimeError("cmake did not produce the _epmc extension")
        self.copy_file(built[0], out_dir / built[0].name)
        self.copy_file(source_dir / "python" / "epmc" / "__init__.py", out_dir / "__init__.py")


setup(
    ext_modules=[CMakeExtension("epmc._epmc")],
    cmdclass={"build_ext": CMakeBuild},
    packages=["epmc"],
    package_dir={"epmc": "python/epmc"},
)
