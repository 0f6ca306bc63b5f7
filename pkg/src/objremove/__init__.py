"""Automatic object removal: detection masks, coarse-to-fine inpainting with
contextual attention under masked WGAN-GP, x4 super-resolution and compositing."""

__version__ = "0.1.0"
