from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

setup(
    name="hoiforge",
    version="0.1.0",
    author="hoiforge contributors",
    description="Hand-object interaction poses, rasterized conditions, condition latents and video metrics",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["examples", "examples.*"]),
    package_data={"hoiforge": ["assets/*"]},
    include_package_data=True,
    classifiers=[],
    python_requires=">=3.8",
    install_requires=requirements,
    extras_require={"test": ["pytest>=7"]},
    entry_points={"console_scripts": ["hoi-forge=hoiforge.cli:main"]},
    keywords="hand-object interaction mesh trimesh rasterization motion-fidelity procrustes frechet-distance",
)
