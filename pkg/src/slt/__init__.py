"""Staged lattice translation toolkit with a form-based judging workbench."""

__version__ = "0.1.0"
