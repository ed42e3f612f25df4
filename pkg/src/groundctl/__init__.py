"""Ground-state steering of bilinear parabolic systems at finite truncation."""
__version__ = "0.1.0"
