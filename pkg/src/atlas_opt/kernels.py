"""Hot numeric kernels: numba-compiled loops with a pure-numpy fallback.

Two interchangeable backends implement the same math:

* ``numba``: serial/parallel ``@njit`` loops (default when numba imports).
* ``numpy``: vectorized fallback, no compilation step.

The backend is selected once at import from the ``ATLAS_OPT_BACKEND``
environment variable (``auto`` | ``numba`` | ``numpy``) and can be switched
programmatically with :func:`set_backend` / :func:`use_backend`.

``ATLAS_OPT_THREADS`` caps the numba worker pool (0 = auto). Per-sample
kernels only ever write disjoint output rows and every reduction runs in
fixed index order afterwards, so results are bit-identical for any thread
count within a backend.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # workqueue is always available and fork-safe; avoids TBB probing
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

LOG_FLOOR = 1e-300

_VALID_BACKENDS = ("numba", "numpy")


def _resolve_backend(name: str) -> str:
    if name == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in _VALID_BACKENDS:
        raise ValueError(
            f"unknown backend {name!r}; expected one of auto, numba, numpy"
        )
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("backend 'numba' requested but numba is not importable")
    return name


_ACTIVE = _resolve_backend(os.environ.get("ATLAS_OPT_BACKEND", "auto"))


def backend() -> str:
    """Name of the active backend ('numba' or 'numpy')."""
    return _ACTIVE


def set_backend(name: str) -> str:
    """Switch backend; returns the previously active one."""
    global _ACTIVE
    previous = _ACTIVE
    _ACTIVE = _resolve_backend(name)
    return previous


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch backend (for tests and benchmarks)."""
    previous = set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def parse_thread_cap(raw: str | None) -> int:
    """Validate an ATLAS_OPT_THREADS value. 0 means auto."""
    if raw is None or raw == "":
        return 0
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"ATLAS_OPT_THREADS must be an integer, got {raw!r}")
    if cap < 0:
        raise ValueError(f"ATLAS_OPT_THREADS must be >= 0, got {cap}")
    return cap


def apply_thread_cap(cap: int | None = None) -> int:
    """Cap the numba worker pool. Returns the effective worker count.

    No-op on the numpy backend (it runs a single vectorized worker).
    """
    if cap is None:
        cap = parse_thread_cap(os.environ.get("ATLAS_OPT_THREADS"))
    if not HAVE_NUMBA:
        return 1
    hw = numba.config.NUMBA_NUM_THREADS
    workers = hw if cap == 0 else min(cap, hw)
    numba.set_num_threads(workers)
    return workers


# ---------------------------------------------------------------------------
# numpy fallback implementations
#
# Reductions that feed results across samples or classes use Neumaier
# compensated summation in fixed index order; the numba kernels run the
# identical per-component operation sequence.
# ---------------------------------------------------------------------------


def _np_kahan_sum(values: np.ndarray) -> float:
    s = 0.0
    c = 0.0
    for x in values:
        x = float(x)
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
    return s + c


def _np_kahan_sum_rows(rows: np.ndarray) -> np.ndarray:
    n, d = rows.shape
    s = np.zeros(d)
    c = np.zeros(d)
    for i in range(n):
        x = rows[i]
        t = s + x
        c = c + np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
        s = t
    return s + c


def _np_batch_probs(text_emb: np.ndarray, images: np.ndarray, tau: float) -> np.ndarray:
    tnorm = np.sqrt(np.einsum("cd,cd->c", text_emb, text_emb))
    inorm = np.sqrt(np.einsum("nd,nd->n", images, images))
    cos = np.clip(images @ text_emb.T / (inorm[:, None] * tnorm[None, :]), -1.0, 1.0)
    z = cos / tau
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _np_batch_losses(
    text_emb: np.ndarray, images: np.ndarray, tau: float, targets: np.ndarray
) -> np.ndarray:
    probs = _np_batch_probs(text_emb, images, tau)
    return -np.einsum("nc,nc->n", targets, np.log(np.maximum(probs, LOG_FLOOR)))


def _np_batch_grads(
    text_emb: np.ndarray,
    images: np.ndarray,
    tau: float,
    targets: np.ndarray,
    w_prompt: np.ndarray,
) -> np.ndarray:
    n = images.shape[0]
    p_dim = w_prompt.shape[1]
    tnorm = np.sqrt(np.einsum("cd,cd->c", text_emb, text_emb))
    out = np.empty((n, p_dim))
    for i in range(n):
        img = images[i]
        inorm = np.sqrt(img @ img)
        cos = np.clip(text_emb @ img / (tnorm * inorm), -1.0, 1.0)
        z = cos / tau
        z -= z.max()
        e = np.exp(z)
        probs = e / e.sum()
        # d(loss)/d(logit_c) = p_c * sum(target) - target_c; exact one-hot /
        # soft targets have sum 1, joint co-optimization targets sum 2
        r = (probs * targets[i].sum() - targets[i]) / tau
        # d(logit_c)/d(t_c) then accumulate over classes in index order
        rows = r[:, None] * (
            img[None, :] / (tnorm[:, None] * inorm)
            - cos[:, None] * text_emb / (tnorm[:, None] ** 2)
        )
        out[i] = _np_kahan_sum_rows(rows) @ w_prompt
    return out


# ---------------------------------------------------------------------------
# numba kernels (same math, explicit loops)
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_kahan_sum(values):
        s = 0.0
        c = 0.0
        for i in range(values.shape[0]):
            x = values[i]
            t = s + x
            if abs(s) >= abs(x):
                c += (s - t) + x
            else:
                c += (x - t) + s
            s = t
        return s + c

    @njit(cache=True)
    def _nb_kahan_sum_rows(rows):
        n, d = rows.shape
        s = np.zeros(d)
        c = np.zeros(d)
        for i in range(n):
            for j in range(d):
                x = rows[i, j]
                t = s[j] + x
                if abs(s[j]) >= abs(x):
                    c[j] += (s[j] - t) + x
                else:
                    c[j] += (x - t) + s[j]
                s[j] = t
        return s + c

    @njit(cache=True)
    def _nb_sample_probs(text_emb, tnorm, img, tau, out):
        num_classes, d = text_emb.shape
        inorm = 0.0
        for j in range(d):
            inorm += img[j] * img[j]
        inorm = np.sqrt(inorm)
        zmax = -np.inf
        for c in range(num_classes):
            dot = 0.0
            for j in range(d):
                dot += text_emb[c, j] * img[j]
            cos = dot / (tnorm[c] * inorm)
            if cos > 1.0:
                cos = 1.0
            elif cos < -1.0:
                cos = -1.0
            out[c] = cos / tau
            if out[c] > zmax:
                zmax = out[c]
        esum = 0.0
        for c in range(num_classes):
            out[c] = np.exp(out[c] - zmax)
            esum += out[c]
        for c in range(num_classes):
            out[c] /= esum
        return inorm

    @njit(cache=True)
    def _nb_tnorms(text_emb):
        num_classes, d = text_emb.shape
        tnorm = np.empty(num_classes)
        for c in range(num_classes):
            acc = 0.0
            for j in range(d):
                acc += text_emb[c, j] * text_emb[c, j]
            tnorm[c] = np.sqrt(acc)
        return tnorm

    @njit(cache=True)
    def _nb_batch_probs(text_emb, images, tau):
        n = images.shape[0]
        num_classes = text_emb.shape[0]
        tnorm = _nb_tnorms(text_emb)
        out = np.empty((n, num_classes))
        for i in range(n):
            _nb_sample_probs(text_emb, tnorm, images[i], tau, out[i])
        return out

    @njit(cache=True)
    def _nb_batch_losses(text_emb, images, tau, targets):
        n = images.shape[0]
        num_classes = text_emb.shape[0]
        tnorm = _nb_tnorms(text_emb)
        probs = np.empty(num_classes)
        out = np.empty(n)
        for i in range(n):
            _nb_sample_probs(text_emb, tnorm, images[i], tau, probs)
            acc = 0.0
            for c in range(num_classes):
                p = probs[c]
                if p < LOG_FLOOR:
                    p = LOG_FLOOR
                acc -= targets[i, c] * np.log(p)
            out[i] = acc
        return out

    @njit(cache=True)
    def _nb_sample_grad(text_emb, tnorm, img, tau, target, w_prompt, out):
        num_classes, d = text_emb.shape
        p_dim = w_prompt.shape[1]
        inorm = 0.0
        for j in range(d):
            inorm += img[j] * img[j]
        inorm = np.sqrt(inorm)

        cos = np.empty(num_classes)
        z = np.empty(num_classes)
        zmax = -np.inf
        for c in range(num_classes):
            dot = 0.0
            for j in range(d):
                dot += text_emb[c, j] * img[j]
            s = dot / (tnorm[c] * inorm)
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
            cos[c] = s
            z[c] = s / tau
            if z[c] > zmax:
                zmax = z[c]
        esum = 0.0
        tsum = 0.0
        for c in range(num_classes):
            z[c] = np.exp(z[c] - zmax)
            esum += z[c]
            tsum += target[c]
        # accumulate d(loss)/d(t_c) over classes with compensated summation
        acc = np.zeros(d)
        comp = np.zeros(d)
        for c in range(num_classes):
            r = (z[c] / esum * tsum - target[c]) / tau
            a = r / (tnorm[c] * inorm)
            b = r * cos[c] / (tnorm[c] * tnorm[c])
            for j in range(d):
                x = a * img[j] - b * text_emb[c, j]
                t = acc[j] + x
                if abs(acc[j]) >= abs(x):
                    comp[j] += (acc[j] - t) + x
                else:
                    comp[j] += (x - t) + acc[j]
                acc[j] = t
        for j in range(d):
            acc[j] += comp[j]
        for k in range(p_dim):
            dot = 0.0
            for j in range(d):
                dot += acc[j] * w_prompt[j, k]
            out[k] = dot

    @njit(cache=True, parallel=True)
    def _nb_batch_grads(text_emb, images, tau, targets, w_prompt):
        n = images.shape[0]
        p_dim = w_prompt.shape[1]
        tnorm = _nb_tnorms(text_emb)
        out = np.empty((n, p_dim))
        for i in prange(n):
            _nb_sample_grad(
                text_emb, tnorm, images[i], tau, targets[i], w_prompt, out[i]
            )
        return out


# ---------------------------------------------------------------------------
# dispatching wrappers
# ---------------------------------------------------------------------------


def kahan_sum(values: np.ndarray) -> float:
    """Fixed-order Neumaier-compensated sum of a 1-D array."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if _ACTIVE == "numba":
        return float(_nb_kahan_sum(values))
    return _np_kahan_sum(values)


def kahan_sum_rows(rows: np.ndarray) -> np.ndarray:
    """Compensated sum over axis 0, rows added in index order."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if _ACTIVE == "numba":
        return _nb_kahan_sum_rows(rows)
    return _np_kahan_sum_rows(rows)


def batch_probs(text_emb: np.ndarray, images: np.ndarray, tau: float) -> np.ndarray:
    """Class posteriors for each image row: softmax(cos(t_c, I)/tau)."""
    text_emb = np.ascontiguousarray(text_emb, dtype=np.float64)
    images = np.ascontiguousarray(images, dtype=np.float64)
    if _ACTIVE == "numba":
        return _nb_batch_probs(text_emb, images, tau)
    return _np_batch_probs(text_emb, images, tau)


def batch_losses(
    text_emb: np.ndarray, images: np.ndarray, tau: float, targets: np.ndarray
) -> np.ndarray:
    """Per-sample cross-entropy of each image row against its target row."""
    text_emb = np.ascontiguousarray(text_emb, dtype=np.float64)
    images = np.ascontiguousarray(images, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if _ACTIVE == "numba":
        return _nb_batch_losses(text_emb, images, tau, targets)
    return _np_batch_losses(text_emb, images, tau, targets)


def batch_grads(
    text_emb: np.ndarray,
    images: np.ndarray,
    tau: float,
    targets: np.ndarray,
    w_prompt: np.ndarray,
) -> np.ndarray:
    """Per-sample loss gradients w.r.t. the flattened prompt, one row each.

    Rows are independent (safe to compute in parallel); any cross-sample
    reduction is the caller's job and must run in fixed index order.
    """
    text_emb = np.ascontiguousarray(text_emb, dtype=np.float64)
    images = np.ascontiguousarray(images, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    w_prompt = np.ascontiguousarray(w_prompt, dtype=np.float64)
    if _ACTIVE == "numba":
        return _nb_batch_grads(text_emb, images, tau, targets, w_prompt)
    return _np_batch_grads(text_emb, images, tau, targets, w_prompt)
