#!/usr/bin/env python3

import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()


def get_version():
    with open("VERSION", "r") as f:
        return f.readline().strip()


install_requires = [
    "scikit-learn>=1.0",
    "numpy",
    "pandas",
    "click",
    "joblib",
    "loguru",
    "alive-progress>=3.0.1",
]


packages = setuptools.find_packages(exclude=["tests"])
package_data = {
    "skeattn_utils": ["presets/*.cfg"],
}

data_files = [(".", ["README.md", "VERSION"])]

setuptools.setup(
    name="skeattnclr",
    version=get_version(),
    zip_safe=False,
    description="SkeAttnCLR: self-supervised skeleton action representations with attention-masked local contrast",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    packages=packages,
    package_data=package_data,
    data_files=data_files,
    include_package_data=True,
    entry_points={
        "console_scripts": [
            "skeattnclr=train_skeattn.cli:main",
        ],
    },
    extras_require={
        "test": ["pytest"],
    },
    classifiers=[
        "Development Status :: 1 - Planning",
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Natural Language :: English",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Operating System :: OS Independent",
    ],
    install_requires=install_requires,
    python_requires=">=3.8",
)
