"""Extraction jobs: walk a class-per-directory image folder, embed images
and templated class texts, and write the dataset CSV files the training
CLI consumes.

Wire formats (shared with the trainer, floats at 17 significant digits):

    # class_texts C=<int> d=<int>      rows: class_index,class_name,e_0,...
    # images C=<int> d=<int>           rows: id,label,e_0,...
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import PLACEHOLDER, ExtractorError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff")


@dataclass
class ExtractionJob:
    """What to embed and where the CSVs go."""

    dataset_dir: str
    class_names: list[str]
    template: str = f"a photo of a {PLACEHOLDER}."
    out_images: str = "images_train.csv"
    out_classes: str = "class_texts.csv"
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if PLACEHOLDER not in self.template:
            raise ExtractorError(
                f"template {self.template!r} has no {PLACEHOLDER} placeholder"
            )
        if not self.class_names:
            raise ExtractorError("class name list is empty")
        if self.batch_size < 1:
            raise ExtractorError("batch_size must be >= 1")


def classes_from_directory(dataset_dir: str) -> list[str]:
    """Class names are the sorted subdirectory names (index = sort order)."""
    if not os.path.isdir(dataset_dir):
        raise ExtractorError(f"{dataset_dir!r} is not a directory")
    names = sorted(
        entry for entry in os.listdir(dataset_dir)
        if os.path.isdir(os.path.join(dataset_dir, entry))
    )
    if len(names) < 2:
        raise ExtractorError(
            f"{dataset_dir!r} needs at least 2 class subdirectories, found {names}"
        )
    return names


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _safe_id(rel_path: str) -> str:
    # the CSV is comma-separated; ids are relative paths with '/' separators
    rel = rel_path.replace(os.sep, "/")
    if "," in rel or "\n" in rel:
        raise ExtractorError(f"image path {rel!r} may not contain commas or newlines")
    return rel


def extract_class_text_embeddings(job: ExtractionJob, encoder) -> str:
    """Embed one templated prompt per class and write the class_texts CSV."""
    texts = [job.template.replace(PLACEHOLDER, name) for name in job.class_names]
    emb = np.asarray(encoder.encode_texts(texts), dtype=np.float64)
    if emb.shape != (len(texts), encoder.text_dim):
        raise ExtractorError(
            f"encoder returned shape {emb.shape}, expected ({len(texts)}, {encoder.text_dim})"
        )
    if not np.all(np.isfinite(emb)):
        raise ExtractorError("non-finite text embedding")
    with open(job.out_classes, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# class_texts C={len(texts)} d={encoder.text_dim}\n")
        for idx, name in enumerate(job.class_names):
            if "," in name:
                raise ExtractorError(f"class name {name!r} may not contain commas")
            fh.write(f"{idx},{name}," + ",".join(_fmt(x) for x in emb[idx]) + "\n")
    return job.out_classes


def list_images(dataset_dir: str, class_names: list[str]) -> list[tuple[str, int]]:
    """(relative path, class index) pairs in deterministic sorted order."""
    pairs: list[tuple[str, int]] = []
    for idx, name in enumerate(class_names):
        class_dir = os.path.join(dataset_dir, name)
        if not os.path.isdir(class_dir):
            raise ExtractorError(f"missing class directory {class_dir!r}")
        for fname in sorted(os.listdir(class_dir)):
            if fname.lower().endswith(IMAGE_EXTENSIONS):
                pairs.append((os.path.join(name, fname), idx))
    if not pairs:
        raise ExtractorError(f"no images found under {dataset_dir!r}")
    return pairs


def extract_image_embeddings(job: ExtractionJob, encoder) -> tuple[str, int, int]:
    """Embed every readable image and write the images CSV.

    Unreadable files are skipped with a warning; returns
    (path, written count, skipped count).
    """
    pairs = list_images(job.dataset_dir, job.class_names)
    loaded: list[tuple[str, int, Image.Image]] = []
    skipped = 0
    for rel, label in pairs:
        path = os.path.join(job.dataset_dir, rel)
        try:
            with Image.open(path) as img:
                loaded.append((_safe_id(rel), label, img.convert("RGB")))
        except (UnidentifiedImageError, OSError) as exc:
            skipped += 1
            print(f"warning: skipping unreadable image {path}: {exc}", file=sys.stderr)
    if not loaded:
        raise ExtractorError("every image was unreadable")
    emb = np.asarray(
        encoder.encode_images([img for _, _, img in loaded]), dtype=np.float64
    )
    if not np.all(np.isfinite(emb)):
        raise ExtractorError("non-finite image embedding")
    num_classes = len(job.class_names)
    with open(job.out_images, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# images C={num_classes} d={encoder.image_dim}\n")
        for (sid, label, _), row in zip(loaded, emb):
            fh.write(f"{sid},{label}," + ",".join(_fmt(x) for x in row) + "\n")
    if skipped:
        print(f"skipped {skipped} unreadable image(s)", file=sys.stderr)
    return job.out_images, len(loaded), skipped
