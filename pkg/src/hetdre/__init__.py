"""Dialogue relation extraction with a heterogeneous graph attention network."""

__version__ = "0.1.0"
