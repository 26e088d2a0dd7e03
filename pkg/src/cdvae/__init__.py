"""Cross-domain variational auto-encoder for non-parallel voice conversion."""

__version__ = "0.1.0"
