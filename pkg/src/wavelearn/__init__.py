"""Learnable wavelet filter-bank network for raw-waveform classification."""

__version__ = "0.1.0"
