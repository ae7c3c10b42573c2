"""
flex - feature-logic embeddings for first-order-logic queries over knowledge graphs
"""
__version__ = "1.0.0"
__author__ = "flex developers"

# import name -> pip name
REQUIRED_MODULES = {
    "numpy": "numpy",
    "pandas": "pandas",
    "openpyxl": "openpyxl",
    "tqdm": "tqdm",
    "dotenv": "python-dotenv",
}


def check_dependencies() -> list:
    """Return the pip names of required packages that can't be imported"""
    missing = []
    for module, package in REQUIRED_MODULES.items():
        try:
            __import__(module)
        except ImportError:
            missing.append(package)
    return missing
