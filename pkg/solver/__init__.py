"""Levenberg driver, linear solvers and solver strategies."""
