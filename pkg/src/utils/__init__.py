"""Statistics helpers for replica aggregation."""
