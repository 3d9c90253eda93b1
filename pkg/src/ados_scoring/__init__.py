"""Scoring pipeline for ADOS-2 Module 3 language items from dialogue transcripts."""

__version__ = "0.1.0"
