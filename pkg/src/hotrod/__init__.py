"""Routine features from wearable time series via Toeplitz clustering and Hawkes processes."""

__version__ = "0.1.0"
