"""Dynamic multi-modal fusion for image privacy prediction."""

__version__ = "0.1.0"
