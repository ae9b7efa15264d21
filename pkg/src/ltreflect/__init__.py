"""Desk-scale long-tail classification trainer with epoch-review
distillation, class-similarity soft labels, and gradient conflict
correction."""

from . import conflict, data, losses, nn, reflect, trainer  # noqa: F401

__version__ = "0.1.0"
