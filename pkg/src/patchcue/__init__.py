"""Reward computation and data curation for patch-grid visual-cue reasoning."""

__version__ = "0.1.0"
