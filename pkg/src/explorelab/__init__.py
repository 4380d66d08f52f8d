"""Count-based exploration pre-training and frozen-logit transfer on gridworlds."""

__version__ = "0.1.0"
