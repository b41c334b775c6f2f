"""Desk-scale prompt-tuning surrogate.

Learnable prompt vectors are concatenated with a per-class token embedding
and pushed through a frozen random linear encoder to produce class text
embeddings; images are scored by temperature-scaled cosine softmax. The
encoder is linear on purpose: prompt gradients stay exact and cheap to
verify against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .numerics import as_matrix, as_vector, cross_entropy

_ENCODER_STREAM = 0xE4C0
_PROMPT_STREAM = 0x9201


@dataclass(frozen=True)
class ModelConfig:
    """Temperature and dimensions of the surrogate.

    prompt_len, prompt_dim: count and width of the learnable prompt vectors;
    token_dim: width of class token embeddings; embed_dim: width of the
    shared image/text embedding space.
    """

    tau: float = 1.0
    prompt_len: int = 4
    prompt_dim: int = 8
    token_dim: int = 8
    embed_dim: int = 16

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        for name in ("prompt_len", "prompt_dim", "token_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def prompt_input_dim(self) -> int:
        return self.prompt_len * self.prompt_dim

    @property
    def encoder_input_dim(self) -> int:
        return self.prompt_input_dim + self.token_dim


@dataclass
class FrozenEncoder:
    """Fixed linear map from concat(prompt vectors, class token) to embed_dim."""

    weight: np.ndarray  # (embed_dim, prompt_len*prompt_dim + token_dim)
    prompt_input_dim: int
    seed: int = 0

    def __post_init__(self):
        self.weight = as_matrix(self.weight, "encoder weight")
        if not 0 < self.prompt_input_dim < self.weight.shape[1]:
            raise ValueError("prompt_input_dim must split the encoder input")
        if np.any(np.all(self.weight == 0.0, axis=1)):
            raise ValueError("encoder weight has an all-zero row")
        self.weight.setflags(write=False)

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int) -> "FrozenEncoder":
        rng = np.random.default_rng([seed, _ENCODER_STREAM])
        din = cfg.encoder_input_dim
        weight = rng.standard_normal((cfg.embed_dim, din)) / np.sqrt(din)
        return cls(weight=weight, prompt_input_dim=cfg.prompt_input_dim, seed=seed)

    @property
    def w_prompt(self) -> np.ndarray:
        """Columns acting on the flattened prompt."""
        return self.weight[:, : self.prompt_input_dim]

    @property
    def w_token(self) -> np.ndarray:
        """Columns acting on the class token."""
        return self.weight[:, self.prompt_input_dim :]


@dataclass
class ClassVocabulary:
    """Class token embeddings plus readable names, one row per class."""

    tokens: np.ndarray  # (num_classes, token_dim)
    names: list[str]

    def __post_init__(self):
        self.tokens = as_matrix(self.tokens, "class tokens")
        if self.tokens.shape[0] < 2:
            raise ValueError("need at least 2 classes")
        if len(self.names) != self.tokens.shape[0]:
            raise ValueError("one name per class required")
        zero = np.all(self.tokens == 0.0, axis=1)
        if np.any(zero):
            raise ValueError(f"zero token embedding for class {int(np.argmax(zero))}")
        self.tokens.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self.tokens.shape[0]


@dataclass
class ImageSample:
    """One precomputed image embedding with its ground-truth class index."""

    id: str
    embedding: np.ndarray
    label: int

    def __post_init__(self):
        self.embedding = as_vector(self.embedding, f"embedding of {self.id!r}")
        if not np.any(self.embedding != 0.0):
            raise ValueError(f"zero embedding for sample {self.id!r}")
        if self.label < 0:
            raise ValueError(f"negative label for sample {self.id!r}")


@dataclass
class ModelParts:
    """Immutable bundle passed around by the trainer and diagnostics."""

    encoder: FrozenEncoder
    vocab: ClassVocabulary
    cfg: ModelConfig

    @property
    def num_classes(self) -> int:
        return self.vocab.num_classes


def init_prompt(cfg: ModelConfig, seed: int, scale: float = 0.1) -> np.ndarray:
    """Seeded prompt initialization, shape (prompt_len, prompt_dim)."""
    rng = np.random.default_rng([seed, _PROMPT_STREAM])
    return scale * rng.standard_normal((cfg.prompt_len, cfg.prompt_dim))


def _check_prompt(v: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cfg.prompt_len, cfg.prompt_dim):
        raise ValueError(
            f"prompt shape {v.shape} != ({cfg.prompt_len}, {cfg.prompt_dim})"
        )
    if not np.all(np.isfinite(v)):
        raise ValueError("prompt has non-finite entries")
    return v


def encode_class(
    v: np.ndarray, class_index: int, enc: FrozenEncoder, vocab: ClassVocabulary
) -> np.ndarray:
    """Text embedding of one class: W @ concat(v_1..v_M, token_c)."""
    x = np.concatenate([np.asarray(v, dtype=np.float64).ravel(), vocab.tokens[class_index]])
    if x.size != enc.weight.shape[1]:
        raise ValueError(
            f"encoder expects input dim {enc.weight.shape[1]}, got {x.size}"
        )
    return enc.weight @ x


def text_embeddings(v: np.ndarray, parts: ModelParts) -> np.ndarray:
    """All class text embeddings at prompt v, shape (num_classes, embed_dim)."""
    v = _check_prompt(v, parts.cfg)
    prompt_part = parts.encoder.w_prompt @ v.ravel()
    emb = prompt_part[None, :] + parts.vocab.tokens @ parts.encoder.w_token.T
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(
            f"degenerate text embedding for class {int(np.argmax(norms == 0.0))}"
        )
    return emb


def forward_probs(
    v: np.ndarray,
    x: ImageSample,
    enc: FrozenEncoder,
    vocab: ClassVocabulary,
    cfg: ModelConfig,
) -> np.ndarray:
    """Class posterior for one image: softmax over c of cos(t_c, I)/tau."""
    parts = ModelParts(enc, vocab, cfg)
    emb = text_embeddings(v, parts)
    return kernels.batch_probs(emb, x.embedding[None, :], cfg.tau)[0]


def loss(
    v: np.ndarray,
    x: ImageSample,
    target: np.ndarray,
    enc: FrozenEncoder,
    vocab: ClassVocabulary,
    cfg: ModelConfig,
) -> float:
    """Cross-entropy of the prediction for x against an arbitrary target."""
    return cross_entropy(target, forward_probs(v, x, enc, vocab, cfg))


def grad_prompt(
    v: np.ndarray,
    x: ImageSample,
    target: np.ndarray,
    enc: FrozenEncoder,
    vocab: ClassVocabulary,
    cfg: ModelConfig,
) -> np.ndarray:
    """Analytic gradient of loss() w.r.t. v, shape (prompt_len, prompt_dim)."""
    parts = ModelParts(enc, vocab, cfg)
    emb = text_embeddings(v, parts)
    row = kernels.batch_grads(
        emb,
        x.embedding[None, :],
        cfg.tau,
        np.asarray(target, dtype=np.float64)[None, :],
        enc.w_prompt,
    )[0]
    return row.reshape(cfg.prompt_len, cfg.prompt_dim)


def zero_shot_probs(
    x: ImageSample,
    reference_prompt: np.ndarray,
    enc: FrozenEncoder,
    vocab: ClassVocabulary,
    cfg: ModelConfig,
) -> np.ndarray:
    """Posterior at the fixed reference prompt (never trained)."""
    return forward_probs(reference_prompt, x, enc, vocab, cfg)


# --- batched views used by the trainer and diagnostics ---------------------


def stack_samples(samples) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Split a sample sequence into (ids, image matrix, label vector)."""
    if not samples:
        raise ValueError("empty sample sequence")
    ids = [s.id for s in samples]
    images = np.stack([s.embedding for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return ids, images, labels


def batch_forward_probs(v: np.ndarray, images: np.ndarray, parts: ModelParts) -> np.ndarray:
    emb = text_embeddings(v, parts)
    return kernels.batch_probs(emb, images, parts.cfg.tau)


def batch_losses(
    v: np.ndarray, images: np.ndarray, targets: np.ndarray, parts: ModelParts
) -> np.ndarray:
    emb = text_embeddings(v, parts)
    return kernels.batch_losses(emb, images, parts.cfg.tau, targets)


def batch_grad_rows(
    v: np.ndarray, images: np.ndarray, targets: np.ndarray, parts: ModelParts
) -> np.ndarray:
    """Per-sample prompt gradients as flat rows, shape (n, prompt_len*prompt_dim)."""
    emb = text_embeddings(v, parts)
    return kernels.batch_grads(emb, images, parts.cfg.tau, targets, parts.encoder.w_prompt)


def onehot_rows(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """One-hot target matrix for a label vector."""
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out
