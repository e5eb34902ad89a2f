"""Conflict resolution and fusion of client adapter updates."""
