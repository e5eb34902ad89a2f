"""Adapter files and JSON reports on disk."""
