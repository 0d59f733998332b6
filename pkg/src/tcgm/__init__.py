"""Total correlation gain maximization (TCGM) for multi-modal classification."""

__version__ = "0.1.0"
