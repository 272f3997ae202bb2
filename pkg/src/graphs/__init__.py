"""LangGraph graphs used by the CLI."""
