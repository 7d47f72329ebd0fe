"""Command-line harness: configuration, persistence, training, evaluation and generation."""
