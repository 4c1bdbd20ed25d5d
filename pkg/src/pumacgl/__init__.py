"""Continual node classification with condensed, pseudo-label-enlarged replay memories."""

__version__ = "0.1.0"
