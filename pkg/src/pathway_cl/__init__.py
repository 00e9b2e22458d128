"""Pathway-partitioned continual learning at desk scale."""
