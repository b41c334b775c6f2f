"""Synthetic tasks, base-to-new evaluation, sensitivity sweeps, and the
ablation grid.

The synthetic task plants one prototype per class in embedding space and
derives class tokens whose encoding correlates with the prototype, so the
frozen random encoder starts out better than chance and the offline
soft-label tables carry real class structure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import model
from .labels import OneHotLabel, build_csl, build_isl
from .trainer import LabelTables, TrainConfig, TrainReport, run_training

_TASK_STREAM = 0x7A5C

SWEEP_PARAMS = ("theta", "tau_c", "alpha", "K", "w")

ABLATION_MODES = (
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
class SyntheticTaskConfig:
    """Shape and noise of the generated task.

    rho controls how strongly class tokens correlate with their prototype's
    pre-image under the encoder; init_scale sizes the shared initial prompt
    that also serves as the zero-shot reference.
    """

    c_base: int = 4
    c_new: int = 4
    shots: int = 16
    test_shots: int = 16
    noise_std: float = 0.5
    rho: float = 0.8
    init_scale: float = 0.1
    seed: int = 0
    model: model.ModelConfig = field(default_factory=model.ModelConfig)

    def __post_init__(self):
        if self.c_base < 2:
            raise ValueError(f"c_base must be >= 2, got {self.c_base}")
        if self.c_new < 1:
            raise ValueError(f"c_new must be >= 1, got {self.c_new}")
        if self.shots < 1 or self.test_shots < 1:
            raise ValueError("shots and test_shots must be >= 1")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")


@dataclass
class SyntheticTask:
    """Generated task: base-class training data, base+new test data."""

    train: list[model.ImageSample]
    test: list[model.ImageSample]
    vocab: model.ClassVocabulary
    encoder: model.FrozenEncoder
    cfg: SyntheticTaskConfig

    @property
    def base_classes(self) -> list[int]:
        return list(range(self.cfg.c_base))

    @property
    def new_classes(self) -> list[int]:
        return list(range(self.cfg.c_base, self.cfg.c_base + self.cfg.c_new))

    def train_parts(self) -> model.ModelParts:
        """Model restricted to base classes, as used during training."""
        vocab = model.ClassVocabulary(
            tokens=self.vocab.tokens[: self.cfg.c_base].copy(),
            names=self.vocab.names[: self.cfg.c_base],
        )
        return model.ModelParts(self.encoder, vocab, self.cfg.model)

    def eval_parts(self) -> model.ModelParts:
        return model.ModelParts(self.encoder, self.vocab, self.cfg.model)


@dataclass(frozen=True)
class EvalResult:
    base_acc: float
    new_acc: float
    harmonic: float

    @classmethod
    def from_accuracies(cls, base_acc: float, new_acc: float) -> "EvalResult":
        return cls(base_acc, new_acc, harmonic_mean(base_acc, new_acc))


@dataclass(frozen=True)
class SweepSpec:
    """One swept hyperparameter, its value grid, and the seed replicates."""

    param: str
    grid: tuple
    seeds: tuple

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}")
        if not self.grid:
            raise ValueError("empty sweep grid")
        if not self.seeds:
            raise ValueError("need at least one seed")


def generate_task(cfg: SyntheticTaskConfig) -> SyntheticTask:
    """Build a seeded task with disjoint base and new classes.

    Draw order is fixed (prototypes, token noise, train noise, test noise)
    so identical configs reproduce identical tasks. Class tokens solve the
    encoder least-squares problem for their prototype, then get blended
    with unit noise at weight sqrt(1 - rho^2).
    """
    mc = cfg.model
    num_classes = cfg.c_base + cfg.c_new
    rng = np.random.default_rng([cfg.seed, _TASK_STREAM])
    encoder = model.FrozenEncoder.create(mc, cfg.seed)

    prototypes = rng.standard_normal((num_classes, mc.embed_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    # token whose encoding lands nearest the prototype, plus decorrelating noise
    pinv = np.linalg.pinv(encoder.w_token)
    tokens = np.empty((num_classes, mc.token_dim))
    for c in range(num_classes):
        aligned = pinv @ prototypes[c]
        aligned /= np.linalg.norm(aligned)
        noise = rng.standard_normal(mc.token_dim)
        noise /= np.linalg.norm(noise)
        tokens[c] = cfg.rho * aligned + np.sqrt(1.0 - cfg.rho**2) * noise

    vocab = model.ClassVocabulary(
        tokens=tokens, names=[f"class_{c}" for c in range(num_classes)]
    )

    train: list[model.ImageSample] = []
    for c in range(cfg.c_base):
        for k in range(cfg.shots):
            emb = prototypes[c] + cfg.noise_std * rng.standard_normal(mc.embed_dim)
            train.append(model.ImageSample(id=f"tr-{c}-{k}", embedding=emb, label=c))
    test: list[model.ImageSample] = []
    for c in range(num_classes):
        for k in range(cfg.test_shots):
            emb = prototypes[c] + cfg.noise_std * rng.standard_normal(mc.embed_dim)
            test.append(model.ImageSample(id=f"te-{c}-{k}", embedding=emb, label=c))
    return SyntheticTask(train=train, test=test, vocab=vocab, encoder=encoder, cfg=cfg)


def evaluate(v: np.ndarray, samples, parts: model.ModelParts, class_subset) -> float:
    """Accuracy of the subset-restricted argmax prediction.

    Only samples labelled inside the subset participate; prediction ties
    resolve to the lowest class index.
    """
    subset = sorted(set(int(c) for c in class_subset))
    if not subset:
        raise ValueError("empty class subset")
    if max(subset) >= parts.num_classes or min(subset) < 0:
        raise ValueError(f"class subset {subset} outside [0, {parts.num_classes})")
    kept = [s for s in samples if s.label in set(subset)]
    if not kept:
        raise ValueError("no samples with labels in the class subset")
    _, images, labels = model.stack_samples(kept)
    probs = model.batch_forward_probs(v, images, parts)[:, subset]
    predicted = np.asarray(subset)[probs.argmax(axis=1)]
    return float(np.mean(predicted == labels))


def harmonic_mean(base_acc: float, new_acc: float) -> float:
    """2ab / (a + b); zero when both accuracies vanish."""
    for name, val in (("base_acc", base_acc), ("new_acc", new_acc)):
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {val}")
    if base_acc + new_acc == 0.0:
        return 0.0
    return 2.0 * base_acc * new_acc / (base_acc + new_acc)


def build_tables(task: SyntheticTask, cfg: TrainConfig, v0: np.ndarray) -> LabelTables:
    """Construct the offline soft-label tables a mode needs.

    Class text embeddings and zero-shot probabilities are both taken at the
    fixed reference prompt v0 over the base (training) classes.
    """
    source = cfg.mode.source
    parts = task.train_parts()
    csl = None
    isl = None
    if source in ("csl", "mix"):
        emb = model.text_embeddings(v0, parts)
        csl = build_csl(list(emb), cfg.tau_c)
    if source in ("isl", "mix"):
        _, images, labels = model.stack_samples(task.train)
        probs = model.batch_forward_probs(v0, images, parts)
        zero_shot = {s.id: probs[i] for i, s in enumerate(task.train)}
        onehots = {
            s.id: OneHotLabel(s.label, parts.num_classes) for s in task.train
        }
        isl = build_isl(zero_shot, onehots, cfg.alpha, cfg.force_delta)
    return LabelTables(csl=csl, isl=isl)


def run_experiment(
    task: SyntheticTask, cfg: TrainConfig, tables: LabelTables | None = None
) -> tuple[TrainReport, EvalResult]:
    """Train on the base classes and score the base/new/harmonic triple."""
    parts = task.train_parts()
    v0 = model.init_prompt(task.cfg.model, cfg.seed, task.cfg.init_scale)
    if tables is None:
        tables = build_tables(task, cfg, v0)
    report = run_training(task.train, parts, tables, cfg, v0)
    eval_parts = task.eval_parts()
    base_acc = evaluate(report.final_prompt, task.test, eval_parts, task.base_classes)
    new_acc = evaluate(report.final_prompt, task.test, eval_parts, task.new_classes)
    return report, EvalResult.from_accuracies(base_acc, new_acc)


def _apply_sweep_value(cfg: TrainConfig, param: str, value) -> TrainConfig:
    if param == "K":
        return replace(cfg, period=int(value))
    if param == "w":
        return replace(cfg, mode=replace(cfg.mode, mix_w=float(value)))
    return replace(cfg, **{param: float(value)})


def run_sweep(
    spec: SweepSpec,
    base_cfg: TrainConfig,
    task_cfg: SyntheticTaskConfig,
    out_dir: str | None = None,
) -> list[dict]:
    """Train/evaluate per grid point per seed; optionally emit CSV and SVG."""
    rows: list[dict] = []
    tasks = {
        seed: generate_task(replace(task_cfg, seed=int(seed))) for seed in spec.seeds
    }
    for value in spec.grid:
        for seed in spec.seeds:
            cfg = _apply_sweep_value(
                replace(base_cfg, seed=int(seed)), spec.param, value
            )
            try:
                _, result = run_experiment(tasks[seed], cfg)
            except Exception as exc:
                raise RuntimeError(
                    f"sweep failed at {spec.param}={value}, seed={seed}: {exc}"
                ) from exc
            rows.append(
                {
                    "param": spec.param,
                    "value": float(value),
                    "seed": int(seed),
                    "base_acc": result.base_acc,
                    "new_acc": result.new_acc,
                    "hmean": result.harmonic,
                }
            )
    if out_dir is not None:
        from . import dataio, svgplot

        os.makedirs(out_dir, exist_ok=True)
        dataio.write_rows(
            os.path.join(out_dir, "sweep.csv"),
            ("param", "value", "seed", "base_acc", "new_acc", "hmean"),
            rows,
        )
        grid = [float(v) for v in spec.grid]
        med = lambda key, v: float(
            np.median([r[key] for r in rows if r["value"] == v])
        )
        svgplot.line_plot(
            os.path.join(out_dir, "sweep.svg"),
            grid,
            {
                "base": [med("base_acc", v) for v in grid],
                "new": [med("new_acc", v) for v in grid],
                "H": [med("hmean", v) for v in grid],
            },
            title=f"sensitivity to {spec.param}",
            x_label=spec.param,
            y_label="accuracy",
        )
    return rows


def run_ablation_grid(
    task_cfg: SyntheticTaskConfig,
    base_cfg: TrainConfig,
    seeds,
    out_dir: str | None = None,
) -> list[dict]:
    """All supervision modes on a shared seed set, plus per-mode medians.

    Every mode within one seed shares the same generated task, initial
    prompt, and offline tables, so rows differ only by supervision.
    """
    from .trainer import TrainMode

    rows: list[dict] = []
    per_mode: dict[str, list[EvalResult]] = {name: [] for name in ABLATION_MODES}
    for seed in seeds:
        task = generate_task(replace(task_cfg, seed=int(seed)))
        for name in ABLATION_MODES:
            cfg = replace(
                base_cfg, mode=TrainMode.parse(name, base_cfg.mode.mix_w), seed=int(seed)
            )
            _, result = run_experiment(task, cfg)
            per_mode[name].append(result)
            rows.append(
                {
                    "mode": name,
                    "seed": int(seed),
                    "base_acc": result.base_acc,
                    "new_acc": result.new_acc,
                    "hmean": result.harmonic,
                }
            )
    for name in ABLATION_MODES:
        rows.append(
            {
                "mode": name,
                "seed": "median",
                "base_acc": float(np.median([r.base_acc for r in per_mode[name]])),
                "new_acc": float(np.median([r.new_acc for r in per_mode[name]])),
                "hmean": float(np.median([r.harmonic for r in per_mode[name]])),
            }
        )
    if out_dir is not None:
        from . import dataio

        os.makedirs(out_dir, exist_ok=True)
        dataio.write_rows(
            os.path.join(out_dir, "ablation.csv"),
            ("mode", "seed", "base_acc", "new_acc", "hmean"),
            rows,
        )
    return rows


def directional_check(rows: list[dict]) -> dict:
    """Soft desk-scale directions extracted from ablation medians.

    Direction 1: instance-wise alternating labels should not lose new-class
    accuracy against pure one-hot training. Direction 2: alternating uniform
    smoothing should not lose harmonic mean against always-on smoothing.
    Reported, not asserted; desk-scale tasks need not mirror the full-scale
    ordering.
    """
    med = {r["mode"]: r for r in rows if r["seed"] == "median"}
    isl_vs_onehot = med["atlas-isl"]["new_acc"] >= med["onehot"]["new_acc"]
    alt_vs_soft = med["atlas"]["hmean"] >= med["ls"]["hmean"]
    return {
        "atlas_isl_new": med["atlas-isl"]["new_acc"],
        "onehot_new": med["onehot"]["new_acc"],
        "direction_new_acc_pass": bool(isl_vs_onehot),
        "atlas_h": med["atlas"]["hmean"],
        "ls_h": med["ls"]["hmean"],
        "direction_hmean_pass": bool(alt_vs_soft),
    }
