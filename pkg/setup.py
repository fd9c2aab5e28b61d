from setuptools import setup, find_packages

setup(
    name="force_aggregator",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy",
        "scipy",
    ],
    entry_points={
        "console_scripts": [
            "force-aggregator=force_aggregator.cli:main",
        ],
    },
    author="Your Name",
    author_email="your.email@example.com",
    description="Conflict-based aggregation of sensor reports into vehicles and military units",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    url="https://github.com/yourusername/force_aggregator",
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.9",
)
