"""Batched, position-feedback-driven optimization of a user-profile prompt for LLM reranking."""

__version__ = "0.1.0"
