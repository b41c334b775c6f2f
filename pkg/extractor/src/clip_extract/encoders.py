"""Embedding backends.

`ClipEncoder` wraps a pretrained vision-language checkpoint through
`transformers` (needs downloaded weights). `TinyEncoder` is a deterministic,
dependency-light stand-in: fixed pixel statistics for images and hashed
character trigrams for text. Both emit raw (unnormalized) float vectors;
downstream cosine scoring handles norms.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

PLACEHOLDER = "[CLS]"


class ExtractorError(RuntimeError):
    pass


class TinyEncoder:
    """Offline encoder: 8x8 grayscale thumbnail features and trigram hashes.

    Fully deterministic across runs and machines (hashing is md5-based, not
    Python's salted hash), so reruns reproduce files byte-for-byte.
    """

    name = "tiny"
    image_dim = 64
    text_dim = 64

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        out = np.empty((len(images), self.image_dim))
        for i, img in enumerate(images):
            gray = img.convert("L").resize((8, 8), Image.BILINEAR)
            out[i] = np.asarray(gray, dtype=np.float64).ravel() / 255.0
        return out

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.text_dim))
        for i, text in enumerate(texts):
            padded = f"  {text.lower()}  "
            for j in range(len(padded) - 2):
                gram = padded[j : j + 3].encode("utf-8")
                digest = hashlib.md5(gram).digest()
                out[i, digest[0] % self.text_dim] += 1.0
        return out


class ClipEncoder:
    """Pretrained vision-language encoder via transformers."""

    name = "clip"

    def __init__(self, model_name: str, device: str = "cpu", batch_size: int = 16):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ExtractorError(
                "the clip backend needs the optional dependencies; install with "
                "`pip install clip-extract[clip]` or use --backend tiny"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_name)
            self._processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:
            raise ExtractorError(
                f"could not load weights for {model_name!r}: {exc}. "
                "Download the checkpoint to the local huggingface cache first "
                "(or point --model at a local directory), or run with "
                "--backend tiny for an offline test extraction."
            ) from exc
        self._torch = torch
        self._device = device
        self._batch_size = batch_size
        self._model.eval().to(device)
        dim = int(self._model.config.projection_dim)
        self.image_dim = dim
        self.text_dim = dim

    def encode_images(self, images: list[Image.Image]) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(images), self._batch_size):
                batch = images[start : start + self._batch_size]
                inputs = self._processor(images=batch, return_tensors="pt").to(self._device)
                feats = self._model.get_image_features(**inputs)
                chunks.append(feats.cpu().double().numpy())
        return np.concatenate(chunks, axis=0)

    def encode_texts(self, texts: list[str]) -> np.ndarray:
        chunks = []
        with self._torch.no_grad():
            for start in range(0, len(texts), self._batch_size):
                batch = texts[start : start + self._batch_size]
                inputs = self._processor(
                    text=batch, return_tensors="pt", padding=True
                ).to(self._device)
                feats = self._model.get_text_features(**inputs)
                chunks.append(feats.cpu().double().numpy())
        return np.concatenate(chunks, axis=0)


def get_encoder(backend: str, model_name: str, device: str, batch_size: int):
    if backend == "tiny":
        return TinyEncoder()
    if backend == "clip":
        return ClipEncoder(model_name, device=device, batch_size=batch_size)
    raise ExtractorError(f"unknown backend {backend!r}; expected clip or tiny")
