"""freqmosaic: desk-scale Bayer demosaicking with fourier-domain frequency
selection, CFA-guided frequency suppression, and stagewise training."""

__version__ = "0.1.0"
