"""Emotion-cause clause classification with position-augmented embeddings
and reordered prediction over a dynamic global-label vector."""

__version__ = "0.1.0"
