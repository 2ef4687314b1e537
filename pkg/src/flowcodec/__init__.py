"""Learned end-to-end video compression: flow, motion coding, residual coding, range-coded bitstreams."""

__version__ = "0.1.0"
