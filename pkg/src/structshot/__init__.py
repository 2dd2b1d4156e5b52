"""structshot - structure-aware few-shot graph classification."""

__version__ = "0.1.0"
