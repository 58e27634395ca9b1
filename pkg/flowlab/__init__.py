"""Rough flow lab: flows of rough vector fields, brackets and commutators"""

__version__ = "0.1.0"
