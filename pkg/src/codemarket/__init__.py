"""Co-development networks of crypto-asset projects and market event studies."""

__version__ = "0.1.0"
