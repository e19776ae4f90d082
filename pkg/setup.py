try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup


setup(name='darkforge',
      use_scm_version=True,
      setup_requires=['setuptools_scm'],
      version='1.0',
      description='Low-light corpus synthesis, light-adaptive masks and '
                  'lightweight-layer cost analysis',
      author='ACSE project',
      packages=['darkforge'],
      install_requires=['numpy >= 1.20.0', 'scipy', 'sympy', 'pandas',
                        'matplotlib', 'dask', 'Pillow', 'PyYAML'],
      entry_points={'console_scripts': ['darkforge=darkforge.cli:main']}
      )
