import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="chatintent",
    version="0.1.0",
    author="chatintent developers",
    description="A package to predict and generate the intents of live-chat customers from their browsing sessions",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        'Development Status :: 3 - Alpha',
        "Programming Language :: Python :: 3",
        "Operating System :: POSIX",
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence'
        ],
    python_requires='>=3.8',
    keywords='live chat, intent prediction, clickstream, transformer, LLM-as-judge',
    packages = setuptools.find_packages(exclude=['tests']),
    install_requires=['numpy', 'pandas', 'tabulate', 'scikit-learn', 'httpx', 'pydantic>=2', 'coloredlogs'],
    extras_require={'test': ['pytest>=7']},
    scripts=['chatintent/scripts/chatintent_run.py'],
    include_package_data=True,
    package_data={'chatintent': ['templates/*.json', 'tutorials/*.md']},
    zip_safe=False
)
