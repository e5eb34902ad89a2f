"""Deterministic cloud-edge simulation over synthetic regression domains."""
