"""chanfm: masked-reconstruction foundation model for wireless channel tensors."""

__version__ = "0.1.0"
