"""Command-line application around the fair data-exchange solver."""
