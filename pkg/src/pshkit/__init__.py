"""Grid toolkit for plurisubharmonic-type obstacle envelopes, approximation
chains, and hulls on domains in R^2 and R^4."""

__version__ = "0.1.0"
