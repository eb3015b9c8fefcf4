"""Detection rule redundancy analysis: embed, retrieve, analyze, decide."""

__version__ = "0.1.0"
