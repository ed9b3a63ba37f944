"""Embedding-quality metrics for perturbation screens."""

from .data import (CONTROL_LABEL, BundleError, Dataset, EmbeddingMatrix,
                   ExpressionMatrix, LinkDatabase, Metadata, load_bundle,
                   load_link_db, write_bundle)

__version__ = "0.1.0"

__all__ = ["CONTROL_LABEL", "BundleError", "Dataset", "EmbeddingMatrix", "ExpressionMatrix",
           "LinkDatabase", "Metadata", "load_bundle", "load_link_db", "write_bundle"]
