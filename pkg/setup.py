from setuptools import setup, find_packages

setup(
    name="xmodal-depth",
    version="0.1.0",
    description="信心感知的 RGB → 熱像單目深度蒸餾：跨相機深度 warp、loss 與梯度檢查、評估指標與障礙物地圖",
    author="Your Name",
    author_email="you@example.com",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.9",
    install_requires=[
        "click>=8.1.7",
        "rich>=13.7.0",
        "pydantic>=2.5.0",
        "numpy>=1.22",
        "scipy>=1.10",
        "matplotlib>=3.5",
        "scikit-learn>=1.2",
        "alphashape>=1.3",
        "shapely>=2.0",
    ],
    entry_points={
        "console_scripts": [
            "xmodal=xmodal_depth.cli:cli",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
