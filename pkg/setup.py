import os

from setuptools import setup


with open(
    os.path.join(os.path.dirname(os.path.realpath(__file__)), "README.md")
) as file:
    long_description = file.read()

setup(
    name="cobound",
    long_description=long_description,
    long_description_content_type="text/markdown",
    description="Exact martingale-coboundary decompositions on finite spaces, with limit-theorem diagnostics.",
    packages=[
        "cobound",
        "cobound/config",
    ],
    use_scm_version=True,
    setup_requires=["setuptools_scm"],
    install_requires=[
        "numpy",
        "scipy",
        "tqdm",
    ],
    entry_points={
        "console_scripts": [
            "cobound = cobound.cli:main",
        ],
    },
    test_suite="tests",
)
