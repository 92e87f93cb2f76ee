"""Numerical self-checks."""
