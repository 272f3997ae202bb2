"""LangGraph pipeline driving one CLI run."""
