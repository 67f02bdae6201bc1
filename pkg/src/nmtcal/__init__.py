"""Token-level calibration analysis for sequence-to-sequence translation models."""

__version__ = "0.1.0"
