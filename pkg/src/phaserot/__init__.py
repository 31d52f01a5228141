"""Transmitter-side multidimensional rotations for multichannel links with residual phase noise."""

__version__ = "0.1.0"
