"""rfmusic: desk-scale rectified-flow transformer for text-to-music generation."""

__version__ = "0.1.0"
