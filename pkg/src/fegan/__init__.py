"""Feature-enriched GANs for VaR / ES estimation."""

__version__ = "0.1.0"
