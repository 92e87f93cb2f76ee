"""Geometry containers and file formats."""
