"""Coronary-artery segment labeling pipeline.

Centerline ingestion -> segment-graph construction with pose-invariant
embeddings -> message-passing network training and evaluation, plus a
synthetic coronary-tree generator for reproducible experiments.
"""

__version__ = "0.1.0"
