"""Usage-time estimation from SRAM startup patterns."""

__version__ = "0.1.0"
