"""SGD over prompt parameters with selectable supervision modes.

The mode grid mirrors the ablation table: plain one-hot training, soft-only
training, joint co-optimization of the soft and one-hot losses, and the
alternating schedule that runs one soft-label epoch every `period` epochs.

The loop is sequential over iterations; per-sample gradients inside a batch
are independent rows reduced in fixed index order, so reports are
bit-identical for any worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics, model
from .labels import (
    CslTable,
    IslTable,
    MixWeight,
    OneHotLabel,
    SmoothingConfig,
    mix_csl_isl,
    schedule_phase,
    select_label,
    vanilla_smooth,
)
from .numerics import deterministic_mean_rows, deterministic_sum, squared_norm

_SHUFFLE_STREAM = 0x5F0F

VARIANTS = ("onehot", "soft", "joint", "alternating")
SOURCES = ("uniform", "csl", "isl", "mix")

# canonical CLI names for the ablation grid rows
MODE_NAMES = (
    "onehot",
    "ls",
    "ls+y",
    "atlas",
    "csl",
    "csl+y",
    "atlas-csl",
    "isl",
    "isl+y",
    "atlas-isl",
)


@dataclass(frozen=True)
class TrainMode:
    """Supervision variant plus the soft-label source it draws from."""

    variant: str
    source: str | None = None
    mix_w: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "onehot":
            if self.source is not None:
                raise ValueError("onehot mode takes no soft-label source")
        else:
            if self.source not in SOURCES:
                raise ValueError(f"unknown soft-label source {self.source!r}")
        if not 0.0 <= self.mix_w <= 1.0:
            raise ValueError(f"mix_w must be in [0, 1], got {self.mix_w}")

    @classmethod
    def parse(cls, name: str, mix_w: float = 0.5) -> "TrainMode":
        """Parse a CLI mode name like 'onehot', 'ls+y', 'atlas-isl', 'mix'."""
        key = name.strip().lower()
        if key == "onehot":
            return cls("onehot")
        joint = key.endswith("+y")
        if joint:
            key = key[: -len("+y")]
        alternating = key.startswith("atlas")
        if alternating:
            key = key[len("atlas") :].lstrip("-")
            if joint:
                raise ValueError(f"mode {name!r} mixes alternating and joint")
        src = {"ls": "uniform", "": "uniform", "csl": "csl", "isl": "isl", "mix": "mix"}.get(key)
        if src is None:
            raise ValueError(f"unknown mode {name!r}")
        variant = "alternating" if alternating else ("joint" if joint else "soft")
        return cls(variant, src, mix_w)

    def canonical_name(self) -> str:
        if self.variant == "onehot":
            return "onehot"
        src = {"uniform": "ls", "csl": "csl", "isl": "isl", "mix": "mix"}[self.source]
        if self.variant == "joint":
            return f"{src}+y"
        if self.variant == "alternating":
            return "atlas" if src == "ls" else f"atlas-{src}"
        return src


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    period is the alternating interval (the K of the schedule): one
    soft-label epoch closes every `period` epochs.
    """

    mode: TrainMode
    eta: float = 0.5
    epochs: int = 80
    batch_size: int = 16
    period: int = 2
    theta: float = 0.1
    tau_c: float = 0.05
    alpha: float = 0.1
    force_delta: bool = False
    seed: int = 0
    record_full_grad: bool = False

    def validate(self):
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.period < 1:
            raise ValueError(f"K must be >= 1, got {self.period}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if not self.tau_c > 0:
            raise ValueError(f"tau_c must be > 0, got {self.tau_c}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        return self


@dataclass
class LabelTables:
    """Offline soft-label tables available to a run."""

    csl: CslTable | None = None
    isl: IslTable | None = None

    def require(self, source: str | None):
        if source in ("csl", "mix") and self.csl is None:
            raise ValueError(f"mode source {source!r} needs a class-wise table")
        if source in ("isl", "mix") and self.isl is None:
            raise ValueError(f"mode source {source!r} needs an instance-wise table")


@dataclass
class TrainReport:
    """Per-epoch training records plus the final prompt.

    When record_full_grad is set, the report also carries per-step
    full-dataset gradient statistics measured at each iterate before its
    update: squared gradient norm, one-hot gradient variance, and the
    uniform-label gradient deviation.
    """

    xi: np.ndarray
    mean_loss: np.ndarray
    mean_sq_grad_norm: np.ndarray
    train_acc: np.ndarray
    final_prompt: np.ndarray
    wall_seconds: float
    eta: float
    steps_total: int
    loss_at_init: float
    full_grad_sq: np.ndarray | None = None
    sigma2_steps: np.ndarray | None = None
    sigma_hat2_steps: np.ndarray | None = None

    def same_dynamics(self, other: "TrainReport") -> bool:
        """Bit-exact equality of the training dynamics and final prompt.

        The schedule indicator column is excluded: modes can share identical
        dynamics (e.g. alternating with theta=0 versus pure one-hot) while
        reporting different xi traces by construction.
        """
        return (
            np.array_equal(self.mean_loss, other.mean_loss)
            and np.array_equal(self.mean_sq_grad_norm, other.mean_sq_grad_norm)
            and np.array_equal(self.train_acc, other.train_acc)
            and np.array_equal(self.final_prompt, other.final_prompt)
        )

    def identical_records(self, other: "TrainReport") -> bool:
        return self.same_dynamics(other) and np.array_equal(self.xi, other.xi)


def batch_iterator(n: int, batch_size: int, epoch: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle of range(n) split into consecutive batches.

    The permutation is a pure function of (seed, epoch); the last batch may
    be short.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, epoch, _SHUFFLE_STREAM])
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def soft_label_matrix(
    ids: list[str],
    labels: np.ndarray,
    num_classes: int,
    mode: TrainMode,
    tables: LabelTables,
    cfg: TrainConfig,
) -> np.ndarray | None:
    """Per-sample soft labels for the mode's source, one row per sample."""
    if mode.variant == "onehot":
        return None
    tables.require(mode.source)
    onehot = model.onehot_rows(labels, num_classes)
    if mode.source == "uniform":
        # theta * fl(1/C) mirrors the per-sample smoothing op bit-for-bit
        return (1.0 - cfg.theta) * onehot + cfg.theta * (1.0 / num_classes)
    if mode.source == "csl":
        _check_table_classes(tables.csl.num_classes, num_classes)
        return tables.csl.matrix[labels].copy()
    isl_rows = None
    if mode.source in ("isl", "mix"):
        isl_rows = np.stack([tables.isl.label_for(sid) for sid in ids])
        _check_table_classes(isl_rows.shape[1], num_classes)
    if mode.source == "isl":
        return isl_rows
    _check_table_classes(tables.csl.num_classes, num_classes)
    return mode.mix_w * tables.csl.matrix[labels] + (1.0 - mode.mix_w) * isl_rows


def _check_table_classes(table_classes: int, num_classes: int):
    if table_classes != num_classes:
        raise ValueError(
            f"soft-label table covers {table_classes} classes, model has {num_classes}"
        )


def supervision_for(
    sample: model.ImageSample,
    xi: int,
    mode: TrainMode,
    tables: LabelTables,
    cfg: TrainConfig,
    num_classes: int,
) -> np.ndarray:
    """Label for one sample under one schedule phase.

    Class-wise sources look up the ground-truth class row, instance-wise
    sources look up the sample id, the uniform source smooths the one-hot
    label, and the phase indicator picks between soft and one-hot.
    """
    y = OneHotLabel(sample.label, num_classes)
    if mode.variant == "onehot":
        return y.to_vector()
    tables.require(mode.source)
    if mode.source == "uniform":
        soft = vanilla_smooth(y, SmoothingConfig.uniform(num_classes, cfg.theta))
    elif mode.source == "csl":
        soft = tables.csl.label_for(sample.label)
    elif mode.source == "isl":
        soft = tables.isl.label_for(sample.id)
    else:
        soft = mix_csl_isl(
            tables.csl.label_for(sample.label),
            tables.isl.label_for(sample.id),
            MixWeight(mode.mix_w),
        )
    return select_label(xi, y, soft)


def _epoch_xi(epoch: int, cfg: TrainConfig) -> int:
    if cfg.mode.variant == "onehot":
        return 1
    if cfg.mode.variant == "soft":
        return 0
    if cfg.mode.variant == "joint":
        # both labels supervise every iteration; report the one-hot phase
        return 1
    return schedule_phase(epoch, cfg.period)


def run_training(
    data,
    parts: model.ModelParts,
    tables: LabelTables,
    cfg: TrainConfig,
    v0: np.ndarray,
) -> TrainReport:
    """Run the full SGD loop and return its report.

    Per iteration: pick the phase's targets (joint mode stacks the soft and
    one-hot targets, which by linearity of cross-entropy in the target sums
    the two losses and gradients), average per-sample gradients in fixed
    index order, and step v <- v - eta * grad.
    """
    cfg.validate()
    if not data:
        raise ValueError("empty training set")
    started = time.perf_counter()
    num_classes = parts.num_classes
    ids, images, labels = model.stack_samples(data)
    if labels.max() >= num_classes:
        raise ValueError(
            f"label {int(labels.max())} outside [0, {num_classes})"
        )
    n = len(ids)
    onehot = model.onehot_rows(labels, num_classes)
    soft = soft_label_matrix(ids, labels, num_classes, cfg.mode, tables, cfg)

    v = np.array(v0, dtype=np.float64)
    loss_at_init = float(
        deterministic_sum(model.batch_losses(v, images, onehot, parts)) / n
    )

    xi_trace = np.zeros(cfg.epochs, dtype=np.int64)
    mean_loss = np.zeros(cfg.epochs)
    mean_sq_grad = np.zeros(cfg.epochs)
    train_acc = np.zeros(cfg.epochs)
    full_grad_sq: list[float] = []
    sigma2_steps: list[float] = []
    sigma_hat2_steps: list[float] = []

    step = 0
    for epoch in range(cfg.epochs):
        xi = _epoch_xi(epoch, cfg)
        xi_trace[epoch] = xi
        epoch_losses: list[float] = []
        epoch_grad_sq: list[float] = []
        for it, idx in enumerate(batch_iterator(n, cfg.batch_size, epoch, cfg.seed)):
            if cfg.mode.variant == "joint":
                targets = onehot[idx] + soft[idx]
            elif xi == 1:
                targets = onehot[idx]
            else:
                targets = soft[idx]

            if cfg.record_full_grad:
                g_full, s2, sh2 = diagnostics.gradient_stats(v, images, labels, parts)
                full_grad_sq.append(squared_norm(g_full))
                sigma2_steps.append(s2)
                sigma_hat2_steps.append(sh2)

            losses = model.batch_losses(v, images[idx], targets, parts)
            rows = model.batch_grad_rows(v, images[idx], targets, parts)
            if not np.all(np.isfinite(losses)) or not np.all(np.isfinite(rows)):
                raise RuntimeError(
                    f"non-finite loss or gradient at epoch {epoch}, iteration {it}"
                )
            grad = deterministic_mean_rows(rows).reshape(v.shape)
            epoch_losses.append(deterministic_sum(losses))
            epoch_grad_sq.append(squared_norm(grad))
            v = v - cfg.eta * grad
            step += 1

        mean_loss[epoch] = deterministic_sum(epoch_losses) / n
        mean_sq_grad[epoch] = deterministic_sum(epoch_grad_sq) / len(epoch_grad_sq)
        probs = model.batch_forward_probs(v, images, parts)
        train_acc[epoch] = float(np.mean(probs.argmax(axis=1) == labels))

    return TrainReport(
        xi=xi_trace,
        mean_loss=mean_loss,
        mean_sq_grad_norm=mean_sq_grad,
        train_acc=train_acc,
        final_prompt=v,
        wall_seconds=time.perf_counter() - started,
        eta=cfg.eta,
        steps_total=step,
        loss_at_init=loss_at_init,
        full_grad_sq=np.array(full_grad_sq) if cfg.record_full_grad else None,
        sigma2_steps=np.array(sigma2_steps) if cfg.record_full_grad else None,
        sigma_hat2_steps=np.array(sigma_hat2_steps) if cfg.record_full_grad else None,
    )
