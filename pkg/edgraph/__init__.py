"""Embedded-deformation graph: nodes, edges, bindings, partitions."""
