"""Command pipeline: configs, guarded solves and the simulation graph."""
