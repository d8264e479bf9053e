"""Cross-lingual alignment of product classification taxonomies."""

__version__ = "0.1.0"
