"""Adaptive GPU frequency tuning for LLM inference serving."""
