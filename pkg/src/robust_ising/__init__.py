"""Robust learning of Ising models from adversarially corrupted samples."""

__version__ = "0.1.0"
