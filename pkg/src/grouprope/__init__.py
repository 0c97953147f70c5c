"""Group-consistent rotary positional encodings and a desk-scale pseudo-video pipeline."""

__version__ = "0.1.0"
