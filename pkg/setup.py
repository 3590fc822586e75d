from setuptools import setup, find_packages

with open("requirements.txt") as f:
    requires = f.readlines()
    
install_requires = [req.strip() for req in requires if req.strip()]

setup(
    name = 'royolo',
    version = '0.1',
    license = 'GPLv3+',
    description = 'royolo: rotated YOLO post-processing (decode, masked IoU, NMS, evaluation)',
    long_description = open('README.md').read(),
    long_description_content_type = 'text/markdown',
    package_dir = {'': 'src'},
    packages = find_packages(where='src',
                           exclude=['tests*']),
    python_requires = '>=3.8',
    tests_require = ['pytest'],
    install_requires = install_requires,
    entry_points = {'console_scripts': ['royolo = royolo.cli:main']}
)
