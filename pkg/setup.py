#!/usr/bin/env python
# -*- coding:utf-8 -*-

from setuptools import setup

author = 'The AgriBus Team'
url = 'https://github.com/agribus/agribus'


setup(
  name='AgriBus',
  version='0.3.0',
  url=url,
  author=author,
  description='Data-centric publish-subscribe for agricultural machines, '
              'with an ISOBUS style task controller on top',
  license='GPLv3+',
  packages=['AgriBus'],
  package_data={'AgriBus': ['data/*.json']},
  scripts=['agribus'],
  python_requires='>=3.8',
  install_requires=[
    'pyxdg',
    'cryptography>=3.0',
    'jsonschema',
  ],
  extras_require={
    'test': ['pytest', 'hypothesis'],
  },
)
