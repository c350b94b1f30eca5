#!/usr/bin/env python3
from setuptools import setup, find_packages

# Core dependencies that are safe to install on all platforms
install_requires = [
    'python-box==7.1.1',
    'python-dateutil==2.9.0',
    'pytz==2024.1',
    'pandas==2.2.1',
    'numpy==1.26.4',
    'python-dotenv>=1.0.1,<2.0.0',
    'tqdm>=4.66.1,<5.0.0',
    'loguru>=0.7.2,<1.0.0',
    'tomli>=2.0.1; python_version < "3.11"',  # tomllib is stdlib from 3.11
]

optional_deps = {
    'dev': [
        'pytest>=8.1.1,<9.0.0',
        'pytest-cov>=4.1.0,<5.0.0',
        'black>=24.3.0,<25.0.0',
        'isort>=5.13.2,<6.0.0',
        'flake8>=7.0.0,<8.0.0',
        'mypy>=1.8.0,<2.0.0',
    ]
}

setup(
    name="ev_taxi_fleet_sim",
    version="0.1.0",
    packages=find_packages(include=['app', 'app.*']),
    install_requires=install_requires,
    extras_require=optional_deps,
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "ev-fleet-sim=app.cli:main",
        ],
    },
    include_package_data=True,
    package_data={
        'app': ['*.json', '*.md', '*.txt'],
    },
    zip_safe=False,
)
