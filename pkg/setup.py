from setuptools import find_packages, setup

setup(
    name='pid-digitize',
    version='0.1.0',
    description='P&ID sheet digitization, synthetic dataset generation and evaluation',
    packages=find_packages(include=['src', 'src.*']),
    py_modules=['main'],
    python_requires='>=3.10',
    install_requires=[
        'networkx>=3.4',
        'numpy>=2.2',
        'opencv-python-headless>=4.11',
        'openpyxl>=3.1',
        'pandas>=2.3',
        'psutil>=7.0',
        'scikit-image>=0.25',
        'scikit-learn>=1.7',
        'scipy>=1.15',
    ],
    extras_require={'test': ['pytest>=8.4']},
    entry_points={'console_scripts': ['pid-digitize=main:main']},
)
