"""Peridynamic crack-pattern simulation, image datasets, CNN mode classification
and Neural Process image completion with uncertainty maps."""

__version__ = "0.1.0"
