"""Next-hour zonal electricity price forecasting as next-frame video prediction."""

__version__ = "0.1.0"
