"""Multi-treatment ITE estimation on networked observational data."""

__version__ = "0.1.0"
