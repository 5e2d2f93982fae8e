"""Time-aware retrieval over long chat logs with chain-of-table filtering."""

__version__ = "0.1.0"
