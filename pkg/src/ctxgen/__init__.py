"""Context-conditioned generation and evaluation of household load profiles."""

__version__ = "0.1.0"
