"""Supervision signals: one-hot, uniform smoothing, class-wise and
instance-wise soft-label tables, and the alternating selection rule.

Both soft-label tables are built offline, before training, and are immutable
afterwards; training only ever reads them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_vector, check_prob_vector


@dataclass(frozen=True)
class OneHotLabel:
    class_index: int
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not 0 <= self.class_index < self.num_classes:
            raise ValueError(
                f"class_index {self.class_index} outside [0, {self.num_classes})"
            )

    def to_vector(self) -> np.ndarray:
        out = np.zeros(self.num_classes)
        out[self.class_index] = 1.0
        return out


@dataclass
class SmoothingConfig:
    """Smoothing strength theta and the prior the mass is spread over."""

    theta: float
    prior: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        self.prior = check_prob_vector(self.prior, "smoothing prior")

    @classmethod
    def uniform(cls, num_classes: int, theta: float) -> "SmoothingConfig":
        return cls(theta=theta, prior=np.full(num_classes, 1.0 / num_classes))


@dataclass(frozen=True)
class MixWeight:
    w: float

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"mix weight must be in [0, 1], got {self.w}")


@dataclass
class CslTable:
    """Row-stochastic inter-class similarity matrix; row c is class c's label."""

    matrix: np.ndarray  # (C, C)
    tau_c: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("similarity matrix must be square")
        for i in range(m.shape[0]):
            check_prob_vector(m[i], f"similarity row {i}")
            if m[i].max() > m[i, i]:
                raise ValueError(f"row {i} maximum is off-diagonal")
        if not self.tau_c > 0:
            raise ValueError(f"tau_c must be > 0, got {self.tau_c}")
        self.matrix = m
        self.matrix.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    def label_for(self, class_index: int) -> np.ndarray:
        return self.matrix[class_index]

    def column_dominance_fraction(self) -> float:
        """Fraction of columns whose maximum sits on the diagonal.

        Row-wise softmax guarantees the diagonal dominates its row; column
        dominance is not guaranteed, so it is reported rather than asserted.
        """
        m = self.matrix
        return float(np.mean(m.argmax(axis=0) == np.arange(m.shape[0])))


@dataclass
class IslTable:
    """Per-sample soft labels from rectified zero-shot predictions.

    force_delta pins the rectification indicator to 1 for every sample (the
    few-shot regime); it is a build-time switch, not persisted with the table.
    """

    labels: dict[str, np.ndarray]
    alpha: float
    force_delta: bool | None = None
    num_rectified: int = 0
    num_argmax_corrected: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        for sid, lab in self.labels.items():
            self.labels[sid] = check_prob_vector(lab, f"soft label for {sid!r}")

    @property
    def fraction_argmax_corrected(self) -> float:
        """Among rectified samples, how many end with the true class on top.

        Rectification does not force the target to the argmax for small
        alpha; this statistic reports how often it happened to. Vacuously 1
        when nothing was rectified.
        """
        if self.num_rectified == 0:
            return 1.0
        return self.num_argmax_corrected / self.num_rectified

    def label_for(self, sample_id: str) -> np.ndarray:
        try:
            return self.labels[sample_id]
        except KeyError:
            raise KeyError(f"no instance-wise label for sample {sample_id!r}")


def vanilla_smooth(y: OneHotLabel, cfg: SmoothingConfig) -> np.ndarray:
    """(1 - theta) * onehot(y) + theta * prior."""
    if cfg.prior.size != y.num_classes:
        raise ValueError(
            f"prior dim {cfg.prior.size} != num_classes {y.num_classes}"
        )
    return (1.0 - cfg.theta) * y.to_vector() + cfg.theta * cfg.prior


def build_csl(class_text_embeddings, tau_c: float) -> CslTable:
    """Row-softmax of pairwise cosine similarities at temperature tau_c.

    Self-similarity is pinned to exactly 1 so the diagonal is the row-wise
    pre-softmax maximum even when rounding nudges a cosine past 1.
    """
    if not tau_c > 0:
        raise ValueError(f"tau_c must be > 0, got {tau_c}")
    vecs = [as_vector(e, f"class {i} embedding") for i, e in enumerate(class_text_embeddings)]
    if len(vecs) < 2:
        raise ValueError("need at least 2 classes")
    dims = {v.size for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"class embeddings disagree on dim: {sorted(dims)}")
    emb = np.stack(vecs)
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(
            f"zero-norm text embedding for class {int(np.argmax(norms == 0.0))}"
        )
    sim = np.clip((emb @ emb.T) / np.outer(norms, norms), -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    z = sim / tau_c
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return CslTable(matrix=e / e.sum(axis=1, keepdims=True), tau_c=tau_c)


def build_isl(
    zero_shot_probs: dict[str, np.ndarray],
    labels: dict[str, OneHotLabel],
    alpha: float,
    force_delta: bool,
) -> IslTable:
    """Rectified zero-shot labels: (p + delta*alpha*onehot) / (1 + delta*alpha).

    delta is 1 when the zero-shot argmax misses the ground truth (ties broken
    toward the lowest class index), or always 1 when force_delta is set.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    missing = set(zero_shot_probs) ^ set(labels)
    if missing:
        raise KeyError(
            f"probability/label key sets differ on {sorted(missing)[:5]!r}"
        )
    table: dict[str, np.ndarray] = {}
    rectified = 0
    corrected = 0
    for sid, p in zero_shot_probs.items():
        p = check_prob_vector(p, f"zero-shot probs for {sid!r}")
        y = labels[sid]
        if p.size != y.num_classes:
            raise ValueError(f"dim mismatch for sample {sid!r}")
        delta = 1 if force_delta else int(int(np.argmax(p)) != y.class_index)
        lab = (p + delta * alpha * y.to_vector()) / (1.0 + delta * alpha)
        if delta:
            rectified += 1
            corrected += int(int(np.argmax(lab)) == y.class_index)
        table[sid] = lab
    return IslTable(
        labels=table,
        alpha=alpha,
        force_delta=force_delta,
        num_rectified=rectified,
        num_argmax_corrected=corrected,
    )


def schedule_phase(epoch: int, period: int) -> int:
    """Alternating indicator: 0 (soft-label epoch) iff (epoch+1) % period == 0.

    Period 1 makes every epoch a soft-label epoch; over E epochs exactly
    floor(E / period) epochs come out soft.
    """
    if period < 1:
        raise ValueError(f"K must be >= 1, got {period}")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return 0 if (epoch + 1) % period == 0 else 1


def select_label(xi: int, y: OneHotLabel, soft: np.ndarray) -> np.ndarray:
    """xi * onehot(y) + (1 - xi) * soft, with xi restricted to {0, 1}."""
    if xi not in (0, 1):
        raise ValueError(f"xi must be 0 or 1, got {xi}")
    soft = as_vector(soft, "soft label")
    if soft.size != y.num_classes:
        raise ValueError(f"soft label dim {soft.size} != num_classes {y.num_classes}")
    return y.to_vector() if xi == 1 else soft.copy()


def mix_csl_isl(csl_label, isl_label, w: MixWeight) -> np.ndarray:
    """Convex combination w * class-wise + (1 - w) * instance-wise."""
    a = as_vector(csl_label, "class-wise label")
    b = as_vector(isl_label, "instance-wise label")
    if a.size != b.size:
        raise ValueError(f"dim mismatch: {a.size} vs {b.size}")
    return w.w * a + (1.0 - w.w) * b
