from setuptools import setup, find_packages

setup(
    name="relaynet",
    version="0.1",
    packages=find_packages(include=["relaynet", "relaynet.*"]),
    include_package_data=True,
)
