"""Random-coding bounds for unsourced random access with a random, unknown number of users."""

__version__ = "0.1.0"
