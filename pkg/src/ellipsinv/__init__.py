"""Forward and inverse spectroscopic ellipsometry for single thin films."""

__version__ = "0.1.0"
