from setuptools import setup, find_packages

with open('requirements.txt') as f:
    requirements = [
        line.strip() for line in f
        if line.strip() and not line.startswith('#') and not line.startswith('pytest')
    ]

setup(
    name='petc-imc',
    version='1.0.0',
    description='Interval Markov chain abstraction of stochastic PETC sampling behaviour',
    packages=find_packages(exclude=['tests']),
    install_requires=requirements,
    python_requires='>=3.9',
    entry_points={
        'console_scripts': [
            'petc-imc=src.main:main',
        ],
    },
)
