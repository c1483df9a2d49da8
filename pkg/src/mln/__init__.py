"""Masked logit nudging for next-scale autoregressive image editing, at desk scale."""
from .config import EditConfig, PRESETS, preset
from .pipeline import EditReport, edit, edit_style, reconstruct

__all__ = ["EditConfig", "EditReport", "PRESETS", "edit", "edit_style", "preset", "reconstruct"]
__version__ = "0.1.0"
