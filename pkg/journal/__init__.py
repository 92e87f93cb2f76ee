"""Hash-chained run journal."""
