from setuptools import setup, find_packages

setup(
    name="fairprobe",
    version="0.1.0",
    packages=find_packages(include=['fairprobe', 'fairprobe.*']),
    install_requires=[
        'numpy>=1.24',
        'scipy>=1.11.0',
        'pandas>=2.0',
        'pydantic>=2.8',
        'click>=8.1,<8.2',
        'tqdm>=4.65.0',
    ],
    python_requires='>=3.9',
    include_package_data=True,
    package_data={
        'fairprobe': ['configs/*.json'],
    },
    entry_points={
        'console_scripts': [
            'fairprobe=fairprobe.cli:main',
        ],
    },
)
