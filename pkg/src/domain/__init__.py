"""Domain models (Pydantic) shared across services, graphs and the CLI."""
