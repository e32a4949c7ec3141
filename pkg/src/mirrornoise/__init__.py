"""Small-signal noise/headroom analysis for current mirrors and FVF amplifiers."""

__version__ = "0.1.0"
