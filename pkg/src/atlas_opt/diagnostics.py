"""Empirical estimates of the convergence-analysis quantities and numeric
checks of the proved inequalities.

Expectations are replaced by exact means over the finite dataset (the
dataset is the distribution), so the two deviation checks enumerate every
per-sample gradient rather than sampling. The smoothness constant is
unknowable exactly for the surrogate; it is probed from gradient
differences and doubled as a safety margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .numerics import deterministic_mean_rows, deterministic_sum, squared_norm

_PROBE_STREAM = 0xB3A7

DEVIATION_SLACK = 1e-9
TRAJECTORY_SLACK = 0.05
_ZERO_VARIANCE_FLOOR = 1e-24
_BETA_FLOOR = 1e-12


@dataclass(frozen=True)
class VarianceEstimate:
    """One-hot gradient variance, uniform-label deviation, and their ratio."""

    sigma2: float
    sigma_hat2: float
    kappa: float


@dataclass(frozen=True)
class BoundInputs:
    """Everything the two convergence bounds consume.

    f0 is the mean loss at the initial prompt, steps the total number of
    SGD iterations, and eta must equal 1/beta_hat for trajectory checks.
    """

    f0: float
    eta: float
    steps: int
    theta: float
    period: int
    kappa: float
    sigma2: float
    beta_hat: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.period < 1:
            raise ValueError(f"K must be >= 1, got {self.period}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        for name in ("f0", "kappa", "sigma2", "beta_hat"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class BoundReport:
    """Bound values, the measured trajectory average, and pass flags."""

    atlas_bound: float
    ls_bound: float
    measured_avg_sq_grad: float
    trajectory_pass: bool
    alternating_dev_lhs: float = float("nan")
    alternating_dev_rhs: float = float("nan")
    smoothed_dev_lhs: float = float("nan")
    smoothed_dev_rhs: float = float("nan")
    alternating_dev_pass: bool = False
    smoothed_dev_pass: bool = False
    kappa: float = float("nan")
    sigma2: float = float("nan")
    beta_hat: float = float("nan")
    f0: float = float("nan")
    eta: float = float("nan")
    steps: int = 0
    theta: float = float("nan")
    period: int = 0

    def summary_text(self) -> str:
        flag = lambda ok: "pass" if ok else "FAIL"
        lines = [
            "convergence diagnostics",
            f"  f0={self.f0:.6g} eta={self.eta:.6g} steps={self.steps} "
            f"theta={self.theta:g} K={self.period}",
            f"  sigma2={self.sigma2:.6g} kappa={self.kappa:.6g} beta_hat={self.beta_hat:.6g}",
            f"  alternating bound   : {self.atlas_bound:.6g}",
            f"  non-alternating bound: {self.ls_bound:.6g}",
            f"  measured avg ||grad F||^2: {self.measured_avg_sq_grad:.6g} "
            f"[{flag(self.trajectory_pass)}]",
            f"  deviation bound, alternating labels : lhs={self.alternating_dev_lhs:.6g} "
            f"rhs={self.alternating_dev_rhs:.6g} [{flag(self.alternating_dev_pass)}]",
            f"  deviation bound, smoothed labels    : lhs={self.smoothed_dev_lhs:.6g} "
            f"rhs={self.smoothed_dev_rhs:.6g} [{flag(self.smoothed_dev_pass)}]",
        ]
        return "\n".join(lines)


def full_gradient(v: np.ndarray, data, parts: model.ModelParts) -> np.ndarray:
    """Mean one-hot prompt gradient over the whole dataset (empirical grad F)."""
    if not data:
        raise ValueError("empty dataset")
    _, images, labels = model.stack_samples(data)
    onehot = model.onehot_rows(labels, parts.num_classes)
    rows = model.batch_grad_rows(v, images, onehot, parts)
    return deterministic_mean_rows(rows).reshape(v.shape)


def gradient_stats(
    v: np.ndarray, images: np.ndarray, labels: np.ndarray, parts: model.ModelParts
) -> tuple[np.ndarray, float, float]:
    """(flat grad F, one-hot variance, uniform-label deviation) at v.

    Array-level fast path shared with the trainer's per-step recording.
    """
    n, num_classes = images.shape[0], parts.num_classes
    onehot = model.onehot_rows(labels, num_classes)
    rows_y = model.batch_grad_rows(v, images, onehot, parts)
    grad_f = deterministic_mean_rows(rows_y)
    sigma2 = deterministic_sum(np.einsum("ij,ij->i", rows_y - grad_f, rows_y - grad_f)) / n
    uniform = np.full((n, num_classes), 1.0 / num_classes)
    rows_u = model.batch_grad_rows(v, images, uniform, parts)
    sigma_hat2 = (
        deterministic_sum(np.einsum("ij,ij->i", rows_u - grad_f, rows_u - grad_f)) / n
    )
    return grad_f, sigma2, sigma_hat2


def estimate_variances(v: np.ndarray, data, parts: model.ModelParts) -> VarianceEstimate:
    """Exact full-enumeration variance estimates at prompt v."""
    if len(data) < 2:
        raise ValueError("variance estimation needs at least 2 samples")
    _, images, labels = model.stack_samples(data)
    _, sigma2, sigma_hat2 = gradient_stats(v, images, labels, parts)
    if sigma2 <= _ZERO_VARIANCE_FLOOR:
        raise ValueError("zero one-hot variance; kappa undefined")
    return VarianceEstimate(sigma2=sigma2, sigma_hat2=sigma_hat2, kappa=sigma_hat2 / sigma2)


def _smoothed_deviation(
    v: np.ndarray, images: np.ndarray, labels: np.ndarray, parts, theta: float
) -> tuple[float, VarianceEstimate]:
    """Mean squared deviation of smoothed-label gradients from grad F."""
    n, num_classes = images.shape[0], parts.num_classes
    grad_f, sigma2, sigma_hat2 = gradient_stats(v, images, labels, parts)
    if sigma2 <= _ZERO_VARIANCE_FLOOR:
        raise ValueError("zero one-hot variance; kappa undefined")
    onehot = model.onehot_rows(labels, num_classes)
    smoothed = (1.0 - theta) * onehot + theta * (1.0 / num_classes)
    rows = model.batch_grad_rows(v, images, smoothed, parts)
    lhs = deterministic_sum(np.einsum("ij,ij->i", rows - grad_f, rows - grad_f)) / n
    est = VarianceEstimate(sigma2=sigma2, sigma_hat2=sigma_hat2, kappa=sigma_hat2 / sigma2)
    return lhs, est


def smoothed_deviation_check(
    v: np.ndarray, data, parts: model.ModelParts, theta: float
) -> tuple[float, float, bool]:
    """Smoothed-label gradient deviation against (1 - theta + theta*kappa) * sigma2."""
    _, images, labels = model.stack_samples(data)
    lhs, est = _smoothed_deviation(v, images, labels, parts, theta)
    rhs = (1.0 - theta + theta * est.kappa) * est.sigma2
    return lhs, rhs, lhs <= rhs + DEVIATION_SLACK


def alternating_deviation_check(
    v: np.ndarray, data, parts: model.ModelParts, theta: float, period: int
) -> tuple[float, float, bool]:
    """Alternating-label gradient deviation against the schedule-weighted bound.

    The left side enumerates both phases exactly: one-hot epochs carry
    weight (period-1)/period, smoothed epochs weight 1/period.
    """
    if period < 1:
        raise ValueError(f"K must be >= 1, got {period}")
    _, images, labels = model.stack_samples(data)
    soft_lhs, est = _smoothed_deviation(v, images, labels, parts, theta)
    lhs = (period - 1) / period * est.sigma2 + soft_lhs / period
    rhs = (1.0 - theta / period + theta * est.kappa / period) * est.sigma2
    return lhs, rhs, lhs <= rhs + DEVIATION_SLACK


def atlas_bound(inputs: BoundInputs) -> float:
    """2*f0/(eta*T) + (1 - theta/K + theta*kappa/K) * sigma2."""
    variance_term = (
        1.0 - inputs.theta / inputs.period + inputs.theta * inputs.kappa / inputs.period
    )
    return 2.0 * inputs.f0 / (inputs.eta * inputs.steps) + variance_term * inputs.sigma2


def ls_bound(inputs: BoundInputs) -> float:
    """2*f0/(eta*T) + (1 - theta + theta*kappa) * sigma2 (no alternating)."""
    variance_term = 1.0 - inputs.theta + inputs.theta * inputs.kappa
    return 2.0 * inputs.f0 / (inputs.eta * inputs.steps) + variance_term * inputs.sigma2


def probe_smoothness(
    grad_fn, v0: np.ndarray, num_probes: int = 16, radius: float = 1e-3, seed: int = 0
) -> float:
    """Estimate a gradient-Lipschitz constant by random two-point probing.

    Returns twice the largest observed ||grad(v0) - grad(v0 + d)|| / ||d||;
    the factor 2 hedges against probing missing the steepest direction. A
    tiny positive floor keeps 1/beta finite on flat objectives.
    """
    if num_probes < 10:
        raise ValueError(f"num_probes must be >= 10, got {num_probes}")
    if not radius > 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    v0 = np.asarray(v0, dtype=np.float64)
    rng = np.random.default_rng([seed, _PROBE_STREAM])
    g0 = np.asarray(grad_fn(v0)).ravel()
    worst = 0.0
    for _ in range(num_probes):
        d = rng.standard_normal(v0.shape)
        d *= radius / np.linalg.norm(d.ravel())
        g1 = np.asarray(grad_fn(v0 + d)).ravel()
        worst = max(worst, float(np.linalg.norm(g1 - g0)) / radius)
    return max(2.0 * worst, _BETA_FLOOR)


def estimate_beta(
    v: np.ndarray,
    data,
    parts: model.ModelParts,
    num_probes: int = 16,
    radius: float = 1e-3,
    seed: int = 0,
) -> float:
    """Probe the smoothness of the empirical full-dataset objective."""
    return probe_smoothness(
        lambda vv: full_gradient(vv, data, parts), v, num_probes, radius, seed
    )


def trajectory_bound_inputs(
    report, theta: float, period: int, beta_hat: float, steps: int | None = None
) -> BoundInputs:
    """Assemble bound inputs from a run that recorded per-step statistics.

    The analysis treats sigma2 and kappa as global constants; empirically
    they drift with v, so the per-step maxima over the checked window stand
    in for the constants. steps defaults to the full run and may be smaller
    to check a prefix of the trajectory.
    """
    if report.sigma2_steps is None or report.full_grad_sq is None:
        raise ValueError("training report lacks per-step gradient statistics")
    if steps is None:
        steps = report.steps_total
    if not 1 <= steps <= len(report.sigma2_steps):
        raise ValueError(f"steps must be in [1, {len(report.sigma2_steps)}], got {steps}")
    sigma2 = report.sigma2_steps[:steps]
    sigma2_max = float(np.max(sigma2))
    if sigma2_max <= _ZERO_VARIANCE_FLOOR:
        raise ValueError("zero one-hot variance; kappa undefined")
    kappa_max = float(np.max(report.sigma_hat2_steps[:steps] / sigma2))
    return BoundInputs(
        f0=report.loss_at_init,
        eta=report.eta,
        steps=steps,
        theta=theta,
        period=period,
        kappa=kappa_max,
        sigma2=sigma2_max,
        beta_hat=beta_hat,
    )


def trajectory_bound_check(report, inputs: BoundInputs) -> BoundReport:
    """Compare the measured average squared full gradient with the bound.

    The run must have used eta = 1/beta_hat and recorded full-dataset
    gradients at every iterate; the comparison carries 5% slack to absorb
    the smoothness-estimation error.
    """
    if report.full_grad_sq is None:
        raise ValueError("training report lacks the full-gradient trace")
    if report.eta != inputs.eta:
        raise ValueError(
            f"mismatched eta: report ran with {report.eta}, inputs say {inputs.eta}"
        )
    if not np.isclose(inputs.eta * inputs.beta_hat, 1.0, rtol=1e-9):
        raise ValueError("trajectory checks require eta = 1/beta_hat")
    if inputs.steps > len(report.full_grad_sq):
        raise ValueError(
            f"report has {len(report.full_grad_sq)} recorded steps, need {inputs.steps}"
        )
    measured = deterministic_sum(report.full_grad_sq[: inputs.steps]) / inputs.steps
    bound = atlas_bound(inputs)
    return BoundReport(
        atlas_bound=bound,
        ls_bound=ls_bound(inputs),
        measured_avg_sq_grad=measured,
        trajectory_pass=measured <= bound * (1.0 + TRAJECTORY_SLACK),
        kappa=inputs.kappa,
        sigma2=inputs.sigma2,
        beta_hat=inputs.beta_hat,
        f0=inputs.f0,
        eta=inputs.eta,
        steps=inputs.steps,
        theta=inputs.theta,
        period=inputs.period,
    )
