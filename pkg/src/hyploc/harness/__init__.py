"""Configuration, training, evaluation and the command-line interface."""
