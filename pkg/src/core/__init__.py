"""Core utilities (settings, logging, key-value files, errors, rng)."""
