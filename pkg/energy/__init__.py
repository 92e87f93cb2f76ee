"""Energy terms, state layout and the least-squares problem."""
