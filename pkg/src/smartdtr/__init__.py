"""Value estimation for the dynamic treatment regimes embedded in two-stage SMARTs."""

__version__ = "0.1.0"
