"""Structured pruning of single-layer and two-layer chain backbones."""
