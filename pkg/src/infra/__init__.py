"""Infrastructure adapters: spec files, tree dumps and result writers."""
