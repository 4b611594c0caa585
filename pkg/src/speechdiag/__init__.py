"""Diagnostic evaluation harness for generative speech systems."""

from .schema import builtin_schema, load_schema, validate_score

__all__ = ["builtin_schema", "load_schema", "validate_score"]
__version__ = "0.1.0"
