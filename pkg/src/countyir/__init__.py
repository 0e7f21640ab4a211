"""County-level incidence-rate modeling with modifiable/non-modifiable features."""

__version__ = "0.1.0"
