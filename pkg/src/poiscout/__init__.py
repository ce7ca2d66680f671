"""Place-of-interest scoring and budgeted driving-log selection from street-view imagery."""

__version__ = "0.1.0"
