"""Agent-driven auto-tuning of storage-system configurations."""

__version__ = "1.0.0"
