from setuptools import setup, find_packages

__version__ = "0.1"

required_packages = ["click", "matplotlib", "numpy", "pandas",
                     "scikit-learn", "scipy", "seaborn", "tensorflow",
                     "tomli; python_version < '3.11'"]

classes = """
    Development Status :: 3 - Alpha
    License :: OSI Approved :: BSD License
"""
classifiers = [s.strip() for s in classes.split('\n') if s]

with open('README.md') as f:
    long_description = f.read()


setup(
    name="sindex",
    version=__version__,
    description=("Single-index models learned by shallow ReLU networks "
                 "with frozen random biases"),
    long_description=long_description,
    long_description_content_type='text/markdown',
    classifiers=classifiers,
    packages=find_packages(),
    install_requires=required_packages,
    python_requires=">=3.10",
    license="BSD-3-Clause",
    entry_points={
        'console_scripts': ['sindex=sindex.cli:main']
    }
)
