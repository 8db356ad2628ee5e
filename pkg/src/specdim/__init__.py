"""Numerical laboratory for z-transform asymptotics of linear iterations on power-law spectra."""

__version__ = "0.1.0"
