"""Embedding extraction into the atlas-opt dataset CSV formats."""

from .encoders import ClipEncoder, ExtractorError, TinyEncoder, get_encoder
from .extract import (
    ExtractionJob,
    classes_from_directory,
    extract_class_text_embeddings,
    extract_image_embeddings,
    list_images,
)

__version__ = "0.1.0"
