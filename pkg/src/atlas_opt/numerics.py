"""Dense vector primitives: cosine similarity, tempered softmax, cross-entropy.

Everything is float64. Probability vectors are plain 1-D arrays validated by
:func:`check_prob_vector`; reductions that must be bit-stable across worker
counts go through :func:`deterministic_sum`.
"""

from __future__ import annotations

import numpy as np

from . import kernels

PROB_SUM_TOL = 1e-9
PROB_ENTRY_TOL = 1e-12


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array of dim >= 1."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name} must be 1-D with at least one entry")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.size < 1:
        raise ValueError(f"{name} must be 2-D and non-empty")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def check_prob_vector(p, name: str = "probability vector") -> np.ndarray:
    """Validate entries in [0, 1] (tolerance 1e-12) summing to 1 (tolerance 1e-9)."""
    v = as_vector(p, name)
    if v.min() < -PROB_ENTRY_TOL or v.max() > 1.0 + PROB_ENTRY_TOL:
        raise ValueError(f"{name} has entries outside [0, 1]: min={v.min()}, max={v.max()}")
    total = float(v.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"{name} sums to {total!r}, not 1")
    return v


def is_prob_vector(p) -> bool:
    try:
        check_prob_vector(p)
    except ValueError:
        return False
    return True


def cosine_similarity(a, b) -> float:
    """cos(a, b) = <a, b> / (||a|| ||b||), clamped to [-1, 1].

    Raises on zero-norm inputs; a zero embedding has no direction.
    """
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    if va.shape != vb.shape:
        raise ValueError(f"dim mismatch: {va.size} vs {vb.size}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate embedding: zero norm")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))


def softmax_with_temperature(logits, tau: float) -> np.ndarray:
    """softmax(logits / tau) computed with max-subtraction for stability."""
    if not tau > 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    z = as_vector(logits, "logits") / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(target, pred) -> float:
    """-sum(target * log(pred)), with pred floored at 1e-300 before the log."""
    t = as_vector(target, "target")
    p = as_vector(pred, "pred")
    if t.shape != p.shape:
        raise ValueError(f"dim mismatch: {t.size} vs {p.size}")
    return float(-(t @ np.log(np.maximum(p, kernels.LOG_FLOOR))))


def softmax_ce_grad_logits(target, probs) -> np.ndarray:
    """Gradient of cross_entropy(target, softmax(z)) w.r.t. the logits z.

    For a softmax output p and a target summing to 1 this is exactly p - target.
    """
    t = as_vector(target, "target")
    p = as_vector(probs, "probs")
    if t.shape != p.shape:
        raise ValueError(f"dim mismatch: {t.size} vs {p.size}")
    return p - t


def deterministic_sum(values) -> float:
    """Fixed left-to-right compensated (Neumaier) summation.

    The result is a pure function of the value order, so reductions built on
    it are bit-stable no matter how the inputs were produced in parallel.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0
    if not np.all(np.isfinite(arr)):
        raise ValueError("deterministic_sum requires finite values")
    return kernels.kahan_sum(arr.ravel())


def deterministic_mean_rows(rows: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with the rows reduced in fixed index order."""
    m = as_matrix(rows, "rows")
    return kernels.kahan_sum_rows(m) / m.shape[0]


def squared_norm(x) -> float:
    """||x||^2 via the deterministic reduction."""
    v = np.asarray(x, dtype=np.float64).ravel()
    return kernels.kahan_sum(v * v)
