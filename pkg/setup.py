"""
Setup script for blitz-eval
"""

from pathlib import Path

from setuptools import find_packages, setup

# Read version from version module
try:
    from blitz_eval.version import __version__
except ImportError:
    __version__ = "0.1.0"

# Read README for long description
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text(encoding="utf-8") if readme_file.exists() else ""

setup(
    name="blitz-eval",
    version=__version__,
    description=(
        "Spatio-temporal evaluation of place-based police interventions: "
        "hex-grid panels, fixed-effects Poisson models with spatial and temporal lags, "
        "effect sizes and cost-benefit."
    ),
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="Alex J Lennon",
    author_email="ajlennon@dynamicdevices.co.uk",
    maintainer="Alex J Lennon",
    maintainer_email="ajlennon@dynamicdevices.co.uk",
    license="GPL-3.0-or-later",
    packages=find_packages(include=["blitz_eval", "blitz_eval.*"]),
    install_requires=[
        "mcp>=1.0.0,<2",
        "pydantic>=2.0.0",
        "numpy>=1.21.0",
        "scipy>=1.8.0",
    ],
    python_requires=">=3.10",
    entry_points={
        "console_scripts": [
            "blitz-eval=blitz_eval.cli:main",
            "blitz-eval-server=blitz_eval.server.app:main",
        ],
    },
)
