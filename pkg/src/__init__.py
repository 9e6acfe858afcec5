# TrojaTensor - backdoored model detection by joint tensor decomposition
# Version: 0.1.0

__version__ = "0.1.0"
