import re
from pathlib import Path

from setuptools import find_packages, setup

# プロジェクトのルートディレクトリ
here = Path(__file__).resolve().parent


def read_version() -> str:
    """src/__init__.py の __version__ を読む"""
    text = (here / "src" / "__init__.py").read_text(encoding="utf-8")
    match = re.search(r'^__version__ = "([^"]+)"', text, re.MULTILINE)
    if match is None:
        raise RuntimeError("src/__init__.py に __version__ がありません")
    return match.group(1)


def read_requirements() -> list:
    lines = (here / "requirements.txt").read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip() and not line.startswith("#")]


setup(
    name="poisson-ball-toolkit",
    version=read_version(),
    author="mashi727",
    description="単位球体上の Poisson 核積分方程式の数値実験ツール",
    long_description=(here / "README.md").read_text(encoding="utf-8"),
    long_description_content_type="text/markdown",
    keywords="poisson-kernel sobolev-trace conformal-geometry quadrature",
    packages=find_packages(where=".", exclude=["tests", "tests.*", "examples", "examples.*"]),
    py_modules=["cli", "main"],
    python_requires=">=3.8",
    install_requires=read_requirements(),
    extras_require={
        "dev": [
            "pytest>=6.0",
            "pytest-cov>=2.12",
            "black>=21.0",
            "flake8>=3.9",
            "mypy>=0.900",
        ]
    },
    entry_points={"console_scripts": ["poisson-ball=cli:main"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
