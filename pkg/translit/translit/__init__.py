name = "translit"
__version__ = "1.0.0"
