import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

# with open('requirements.txt') as f:
#    requirements = f.read().splitlines()

setuptools.setup(
    name="translit",
    version="1.0.0",
    author="translit developers",
    author_email="",
    description="Roman-Urdu / Urdu transliteration: leakage-free splits, MLM pretraining and two-phase fine-tuning",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
    install_requires=["numpy", "matplotlib", "httpx", "tqdm", "tensorgrad"],
    entry_points={"console_scripts": ["translit = translit.cli:main"]},
    package_data={"translit": ["tests/data/*.json"]},
    include_package_data=True
)
