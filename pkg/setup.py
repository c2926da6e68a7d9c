"""Setup the package."""
import os
from setuptools import setup, find_packages

# get the version
version = None
with open(os.path.join('seer_forecast', '__init__.py'), 'r') as fid:
    for line in (line.strip() for line in fid):
        if line.startswith('__version__'):
            version = line.split('=')[1].strip().strip('\'')
            break
if version is None:
    raise RuntimeError('Could not determine version')

setup(name='seer_forecast',
      version=version,
      description=(
          'Patch-based multivariate forecasting that filters corrupted '
          'tokens, with a benchmark of input corruptions'
          ),
      license='BSD 3-Clause License',
      classifiers=[
          'Programming Language :: Python :: 3.8',
          'Operating System :: OS Independent',
          'Intended Audience :: Science/Research',
      ],
      keywords=[
          "forecasting", "time series", "robustness", "mixture of experts",
          "attention", "perturbation", "benchmark"
          ],
      packages=find_packages(),
      install_requires=['numpy', 'scipy', 'pandas', 'configobj'],
      entry_points={
          'console_scripts': ['seer=seer_forecast.seer:main'],
      },
      zip_safe=False)
