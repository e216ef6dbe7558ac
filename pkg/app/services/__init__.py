"""Services module: data, training, inference and checkpoints."""
