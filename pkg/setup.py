from setuptools import setup, find_packages

setup(
    name="horizon_rl",
    version="0.1.0",
    description="与时间跨度无关的回合式强化学习实验工具",
    packages=find_packages(include=["horizon_rl", "horizon_rl.*"]),
    package_data={"horizon_rl": ["config/corpora/*/*.json", "config/corpora/*/.keep"]},
    install_requires=[
        "numpy",
        "pandas",
        "scipy",
    ],
    entry_points={
        "console_scripts": ["horizon-rl=horizon_rl.cli:main"],
    },
)
