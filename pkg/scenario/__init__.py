"""Synthetic scenarios and registration metrics."""
