"""Pairwise speech quality assessment with preference scores fused from absolute MOS predictions."""

__version__ = "0.1.0"
