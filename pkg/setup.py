"""
Setup script for the RNN data-assimilation lab
"""

from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="rnn-da-lab",
    version="1.0.0",
    author="Your Name",
    description="Reservoir-network forecast models for cycled data assimilation on Lorenz-96",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/yourusername/rnn-da-lab",
    packages=find_packages(exclude=("tests", "tests.*")),
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Atmospheric Science",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "rnnda=src.main:main",
        ],
    },
    package_data={"src": ["model_presets.json"]},
    include_package_data=True,
)
