"""plotkit: report figures from kgflow CSV/JSON run artifacts."""

__version__ = "0.1.0"

from .figures import FigureSpec, SchemaError, render  # noqa: F401
