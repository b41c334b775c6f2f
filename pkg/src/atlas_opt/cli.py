"""Command-line surface.

Subcommands: gen-synth, gen-csl, gen-isl, train, eval, ablate, sweep,
diagnose, report. Option precedence is flag > config file > preset >
default; `--config` points at a key=value text file (gen-synth drops a
reloadable one next to its outputs). Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import dataio, diagnostics, harness, kernels, model, svgplot
from .harness import SyntheticTaskConfig, SweepSpec, generate_task
from .labels import OneHotLabel, build_csl, build_isl
from .trainer import LabelTables, TrainConfig, TrainMode, run_training

DEFAULTS: dict = {
    "seed": 0,
    "c_base": 4,
    "c_new": 4,
    "shots": 16,
    "test_shots": 16,
    "noise_std": 0.5,
    "rho": 0.8,
    "init_scale": 0.1,
    "tau": 0.5,
    "prompt_len": 4,
    "prompt_dim": 8,
    "token_dim": 8,
    "embed_dim": 16,
    "mode": "atlas",
    "eta": 0.5,
    "epochs": 80,
    "batch_size": 16,
    "K": 2,
    "theta": 0.1,
    "tau_c": 0.05,
    "alpha": 0.1,
    "force_delta": False,
    "mix_w": 0.5,
    "reps": 5,
    "steps": 500,
    "probes": 16,
    "probe_radius": 1e-3,
    "param": "K",
    "grid": "1,2,3,4,5",
}

# (K, theta, tau_c, alpha) tuples for the three study regimes; the few-shot
# regime additionally pins the rectification indicator to 1
PRESETS = {
    "base2new": {"K": 2, "theta": 0.1, "tau_c": 0.05, "alpha": 0.1},
    "fewshot": {"K": 3, "theta": 0.05, "tau_c": 0.02, "alpha": 0.1, "force_delta": True},
    "transfer": {"K": 3, "theta": 0.1, "tau_c": 0.04, "alpha": 1.0},
}

_INT_KEYS = {
    "seed", "c_base", "c_new", "shots", "test_shots", "prompt_len", "prompt_dim",
    "token_dim", "embed_dim", "epochs", "batch_size", "K", "reps", "steps", "probes",
}
_FLOAT_KEYS = {
    "noise_std", "rho", "init_scale", "tau", "eta", "theta", "tau_c", "alpha",
    "mix_w", "probe_radius",
}
_BOOL_KEYS = {"force_delta"}
_STR_KEYS = {"mode", "param", "grid", "preset"}


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (validation) instead of 2 on bad usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _coerce(key: str, raw):
    if isinstance(raw, str):
        raw = raw.strip()
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key} expects a boolean, got {raw!r}")
    if key in _STR_KEYS:
        return str(raw)
    raise ValueError(f"unknown configuration key {key!r}")


def parse_config_file(path) -> dict:
    """key=value lines; '#' starts a comment; unknown keys are rejected."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in stripped.split("=", 1))
            try:
                out[key] = _coerce(key, value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}")
    return out


def build_config(args: argparse.Namespace) -> tuple[dict, set]:
    """Layer defaults < preset < config file < explicit flags.

    Returns the effective config and the set of keys the user actually
    provided (config file or flag), which some commands use to pick
    file-driven defaults.
    """
    cfg = dict(DEFAULTS)
    file_values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path is None:
        default_cfg = os.path.join(_data_dir(args), "config.txt")
        if os.path.exists(default_cfg):
            config_path = default_cfg
    if config_path is not None:
        file_values = parse_config_file(config_path)

    preset = getattr(args, "preset", None) or file_values.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(
                f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}"
            )
        cfg.update(PRESETS[preset])

    provided = set()
    for key, value in file_values.items():
        if key == "preset":
            continue
        cfg[key] = value
        provided.add(key)
    for key in DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            cfg[key] = _coerce(key, flag_value)
            provided.add(key)
    return cfg, provided


def write_config_echo(path, cfg: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(cfg):
            value = cfg[key]
            if isinstance(value, bool):
                value = str(value).lower()
            elif isinstance(value, float):
                value = repr(value)
            fh.write(f"{key}={value}\n")


def _data_dir(args) -> str:
    return getattr(args, "data", None) or args.out


def _model_config(cfg: dict) -> model.ModelConfig:
    return model.ModelConfig(
        tau=cfg["tau"],
        prompt_len=cfg["prompt_len"],
        prompt_dim=cfg["prompt_dim"],
        token_dim=cfg["token_dim"],
        embed_dim=cfg["embed_dim"],
    )


def _task_config(cfg: dict) -> SyntheticTaskConfig:
    return SyntheticTaskConfig(
        c_base=cfg["c_base"],
        c_new=cfg["c_new"],
        shots=cfg["shots"],
        test_shots=cfg["test_shots"],
        noise_std=cfg["noise_std"],
        rho=cfg["rho"],
        init_scale=cfg["init_scale"],
        seed=cfg["seed"],
        model=_model_config(cfg),
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        mode=TrainMode.parse(cfg["mode"], cfg["mix_w"]),
        eta=cfg["eta"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        period=cfg["K"],
        theta=cfg["theta"],
        tau_c=cfg["tau_c"],
        alpha=cfg["alpha"],
        force_delta=cfg["force_delta"],
        seed=cfg["seed"],
    ).validate()


class _RunContext:
    """Training inputs resolved from task files or a fresh synthetic task."""

    def __init__(self, cfg: dict, provided: set, data_dir: str):
        images_path = os.path.join(data_dir, "images_train.csv")
        vocab_path = os.path.join(data_dir, "class_texts.csv")
        self.from_files = os.path.exists(images_path) and os.path.exists(vocab_path)
        if self.from_files:
            self.train = dataio.load_image_embeddings(images_path)
            vocab = dataio.load_class_embeddings(vocab_path)
            cfg = dict(cfg)
            cfg["embed_dim"] = self.train[0].embedding.size
            cfg["token_dim"] = vocab.tokens.shape[1]
            self.cfg = cfg
            num_classes = vocab.num_classes
            self.c_base = cfg["c_base"] if "c_base" in provided else num_classes
            if not 2 <= self.c_base <= num_classes:
                raise ValueError(
                    f"c_base={self.c_base} incompatible with {num_classes} classes"
                )
            mc = _model_config(cfg)
            encoder = model.FrozenEncoder.create(mc, cfg["seed"])
            self.vocab_all = vocab
            self.parts_eval = model.ModelParts(encoder, vocab, mc)
            base_vocab = model.ClassVocabulary(
                tokens=vocab.tokens[: self.c_base].copy(),
                names=vocab.names[: self.c_base],
            )
            self.parts_train = model.ModelParts(encoder, base_vocab, mc)
            test_path = os.path.join(data_dir, "images_test.csv")
            self.test = (
                dataio.load_image_embeddings(test_path)
                if os.path.exists(test_path)
                else None
            )
        else:
            task = generate_task(_task_config(cfg))
            self.cfg = cfg
            self.task = task
            self.train = task.train
            self.test = task.test
            self.c_base = cfg["c_base"]
            self.vocab_all = task.vocab
            self.parts_train = task.train_parts()
            self.parts_eval = task.eval_parts()
        self.v0 = model.init_prompt(
            self.parts_train.cfg, self.cfg["seed"], self.cfg["init_scale"]
        )

    @property
    def new_classes(self) -> list[int]:
        return list(range(self.c_base, self.vocab_all.num_classes))

    def tables_for(self, tcfg: TrainConfig, data_dir: str) -> LabelTables:
        """Load tables written by gen-csl/gen-isl, else build them offline."""
        csl = None
        isl = None
        csl_path = os.path.join(data_dir, "csl.csv")
        isl_path = os.path.join(data_dir, "isl.csv")
        if tcfg.mode.source in ("csl", "mix"):
            csl = (
                dataio.load_csl(csl_path)
                if os.path.exists(csl_path)
                else self.build_csl_table(tcfg.tau_c)
            )
        if tcfg.mode.source in ("isl", "mix"):
            isl = (
                dataio.load_isl(isl_path)
                if os.path.exists(isl_path)
                else self.build_isl_table(tcfg.alpha, tcfg.force_delta)
            )
        return LabelTables(csl=csl, isl=isl)

    def build_csl_table(self, tau_c: float):
        emb = model.text_embeddings(self.v0, self.parts_train)
        return build_csl(list(emb), tau_c)

    def build_isl_table(self, alpha: float, force_delta: bool):
        _, images, _ = model.stack_samples(self.train)
        probs = model.batch_forward_probs(self.v0, images, self.parts_train)
        zero_shot = {s.id: probs[i] for i, s in enumerate(self.train)}
        onehots = {
            s.id: OneHotLabel(s.label, self.parts_train.num_classes)
            for s in self.train
        }
        return build_isl(zero_shot, onehots, alpha, force_delta)


def _ensure_out(cfg_out: str) -> str:
    os.makedirs(cfg_out, exist_ok=True)
    return cfg_out


def cmd_gen_synth(args) -> int:
    cfg, _ = build_config(args)
    task = generate_task(_task_config(cfg))
    out = _ensure_out(args.out)
    num_classes = task.vocab.num_classes
    dataio.write_image_embeddings(
        os.path.join(out, "images_train.csv"), task.train, num_classes
    )
    dataio.write_image_embeddings(
        os.path.join(out, "images_test.csv"), task.test, num_classes
    )
    dataio.write_class_embeddings(os.path.join(out, "class_texts.csv"), task.vocab)
    write_config_echo(os.path.join(out, "config.txt"), cfg)
    print(
        f"wrote synthetic task: {len(task.train)} train / {len(task.test)} test "
        f"samples, {num_classes} classes -> {out}"
    )
    return 0


def cmd_gen_csl(args) -> int:
    cfg, provided = build_config(args)
    ctx = _RunContext(cfg, provided, _data_dir(args))
    table = ctx.build_csl_table(cfg["tau_c"])
    out = _ensure_out(args.out)
    dataio.write_csl(os.path.join(out, "csl.csv"), table)
    print(
        f"wrote class-wise soft labels for {table.num_classes} classes "
        f"(tau_c={cfg['tau_c']:g}, column-dominant fraction "
        f"{table.column_dominance_fraction():.3f}) -> {out}/csl.csv"
    )
    return 0


def cmd_gen_isl(args) -> int:
    cfg, provided = build_config(args)
    ctx = _RunContext(cfg, provided, _data_dir(args))
    table = ctx.build_isl_table(cfg["alpha"], cfg["force_delta"])
    out = _ensure_out(args.out)
    dataio.write_isl(os.path.join(out, "isl.csv"), table)
    print(
        f"wrote instance-wise soft labels for {len(table.labels)} samples "
        f"(alpha={cfg['alpha']:g}, rectified {table.num_rectified}, "
        f"argmax-corrected fraction {table.fraction_argmax_corrected:.3f}) "
        f"-> {out}/isl.csv"
    )
    return 0


def cmd_train(args) -> int:
    cfg, provided = build_config(args)
    tcfg = _train_config(cfg)
    data_dir = _data_dir(args)
    ctx = _RunContext(cfg, provided, data_dir)
    tables = ctx.tables_for(tcfg, data_dir)
    report = run_training(ctx.train, ctx.parts_train, tables, tcfg, ctx.v0)
    out = _ensure_out(args.out)
    dataio.write_train_report(os.path.join(out, "report.csv"), report)
    dataio.write_prompt(os.path.join(out, "prompt.csv"), report.final_prompt)
    print(
        f"trained mode={tcfg.mode.canonical_name()} for {tcfg.epochs} epochs "
        f"({report.steps_total} steps): final train acc {report.train_acc[-1]:.4f}, "
        f"final loss {report.mean_loss[-1]:.6f}"
    )
    if ctx.test is not None:
        base = harness.evaluate(
            report.final_prompt, ctx.test, ctx.parts_eval, list(range(ctx.c_base))
        )
        line = f"eval: base_acc={base:.4f}"
        if ctx.new_classes:
            new = harness.evaluate(
                report.final_prompt, ctx.test, ctx.parts_eval, ctx.new_classes
            )
            line += (
                f" new_acc={new:.4f} hmean={harness.harmonic_mean(base, new):.4f}"
            )
        print(line)
    return 0


def cmd_eval(args) -> int:
    cfg, provided = build_config(args)
    data_dir = _data_dir(args)
    ctx = _RunContext(cfg, provided, data_dir)
    if ctx.test is None:
        raise ValueError(f"no images_test.csv under {data_dir}")
    prompt_path = os.path.join(args.out, "prompt.csv")
    if not os.path.exists(prompt_path):
        raise ValueError(f"no trained prompt at {prompt_path}; run train first")
    v = dataio.load_prompt(prompt_path)
    base = harness.evaluate(v, ctx.test, ctx.parts_eval, list(range(ctx.c_base)))
    line = f"base_acc={base:.4f}"
    if ctx.new_classes:
        new = harness.evaluate(v, ctx.test, ctx.parts_eval, ctx.new_classes)
        line += f" new_acc={new:.4f} hmean={harness.harmonic_mean(base, new):.4f}"
    print(line)
    return 0


def cmd_ablate(args) -> int:
    cfg, _ = build_config(args)
    tcfg = _train_config(cfg)
    seeds = [cfg["seed"] + i for i in range(cfg["reps"])]
    out = _ensure_out(args.out)
    rows = harness.run_ablation_grid(_task_config(cfg), tcfg, seeds, out_dir=out)
    check = harness.directional_check(rows)
    for row in rows:
        if row["seed"] == "median":
            print(
                f"{row['mode']:>10}: base={row['base_acc']:.4f} "
                f"new={row['new_acc']:.4f} H={row['hmean']:.4f}"
            )
    print(
        "direction new-class acc (alternating instance-wise >= one-hot): "
        f"{'PASS' if check['direction_new_acc_pass'] else 'FAIL'} "
        f"({check['atlas_isl_new']:.4f} vs {check['onehot_new']:.4f})"
    )
    print(
        "direction harmonic mean (alternating uniform >= always-soft): "
        f"{'PASS' if check['direction_hmean_pass'] else 'FAIL'} "
        f"({check['atlas_h']:.4f} vs {check['ls_h']:.4f})"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg, _ = build_config(args)
    tcfg = _train_config(cfg)
    grid_raw = [tok for tok in cfg["grid"].split(",") if tok.strip()]
    if not grid_raw:
        raise ValueError("empty sweep grid")
    values = tuple(
        int(tok) if cfg["param"] == "K" else float(tok) for tok in grid_raw
    )
    if cfg["param"] == "w" and tcfg.mode.source != "mix":
        raise ValueError("sweeping w requires a mix-source mode (e.g. --mode atlas-mix)")
    spec = SweepSpec(
        param=cfg["param"],
        grid=values,
        seeds=tuple(cfg["seed"] + i for i in range(cfg["reps"])),
    )
    out = _ensure_out(args.out)
    rows = harness.run_sweep(spec, tcfg, _task_config(cfg), out_dir=out)
    print(f"swept {cfg['param']} over {list(values)} x {cfg['reps']} seeds -> {out}")
    for value in values:
        med = float(np.median([r["hmean"] for r in rows if r["value"] == float(value)]))
        print(f"  {cfg['param']}={value}: median H={med:.4f}")
    return 0


def cmd_diagnose(args) -> int:
    cfg, provided = build_config(args)
    data_dir = _data_dir(args)
    ctx = _RunContext(cfg, provided, data_dir)
    parts = ctx.parts_train
    steps = cfg["steps"]

    beta_hat = diagnostics.estimate_beta(
        ctx.v0, ctx.train, parts,
        num_probes=cfg["probes"], radius=cfg["probe_radius"], seed=cfg["seed"],
    )
    per_epoch = -(-len(ctx.train) // cfg["batch_size"])  # ceil division
    epochs = -(-steps // per_epoch)
    tcfg = TrainConfig(
        mode=TrainMode.parse("atlas"),
        eta=1.0 / beta_hat,
        epochs=epochs,
        batch_size=cfg["batch_size"],
        period=cfg["K"],
        theta=cfg["theta"],
        tau_c=cfg["tau_c"],
        alpha=cfg["alpha"],
        force_delta=cfg["force_delta"],
        seed=cfg["seed"],
        record_full_grad=True,
    ).validate()
    report = run_training(ctx.train, parts, LabelTables(), tcfg, ctx.v0)
    inputs = diagnostics.trajectory_bound_inputs(
        report, cfg["theta"], cfg["K"], beta_hat, steps=steps
    )
    bound_report = diagnostics.trajectory_bound_check(report, inputs)
    l2 = diagnostics.alternating_deviation_check(ctx.v0, ctx.train, parts, cfg["theta"], cfg["K"])
    l3 = diagnostics.smoothed_deviation_check(ctx.v0, ctx.train, parts, cfg["theta"])
    bound_report.alternating_dev_lhs, bound_report.alternating_dev_rhs, bound_report.alternating_dev_pass = l2
    bound_report.smoothed_dev_lhs, bound_report.smoothed_dev_rhs, bound_report.smoothed_dev_pass = l3

    out = _ensure_out(args.out)
    dataio.write_bound_report(os.path.join(out, "bounds.csv"), bound_report)
    text = bound_report.summary_text()
    with open(os.path.join(out, "bounds.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def cmd_report(args) -> int:
    if not args.inputs:
        raise ValueError("report needs at least one input CSV (--inputs a.csv ...)")
    columns = None
    merged: list[dict] = []
    for path in args.inputs:
        cols, rows = dataio.read_rows(path)
        if columns is None:
            columns = cols
        elif cols != columns:
            raise ValueError(
                f"{path} columns {cols} differ from {args.inputs[0]} columns {columns}"
            )
        merged.extend(rows)
    out = _ensure_out(args.out)
    merged_path = os.path.join(out, "merged.csv")
    dataio.write_rows(merged_path, tuple(columns), merged)
    print(f"merged {len(args.inputs)} files, {len(merged)} rows -> {merged_path}")

    if "value" in columns and "hmean" in columns:
        values = sorted({float(r["value"]) for r in merged})
        med = lambda key, v: float(
            np.median([float(r[key]) for r in merged if float(r["value"]) == v])
        )
        svgplot.line_plot(
            os.path.join(out, "merged.svg"),
            values,
            {
                "base": [med("base_acc", v) for v in values],
                "new": [med("new_acc", v) for v in values],
                "H": [med("hmean", v) for v in values],
            },
            title="merged sweep",
            x_label=merged[0].get("param", "value") if merged else "value",
            y_label="accuracy",
        )
        print(f"plotted median accuracies -> {out}/merged.svg")
    elif "epoch" in columns and "mean_loss" in columns:
        epochs = [int(r["epoch"]) for r in merged]
        svgplot.line_plot(
            os.path.join(out, "merged.svg"),
            epochs,
            {
                "mean_loss": [float(r["mean_loss"]) for r in merged],
                "train_acc": [float(r["train_acc"]) for r in merged],
            },
            title="training trajectory",
            x_label="epoch",
            y_label="value",
        )
        print(f"plotted training trajectory -> {out}/merged.svg")
    else:
        print("no plottable columns found; skipped SVG")
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--data", default=None, help="directory with task files (default: --out)")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--preset", default=None, help="base2new | fewshot | transfer")
    for key in DEFAULTS:
        flag = "--" + key.replace("_", "-") if key != "K" else "--K"
        p.add_argument(flag, dest=key, default=None, metavar=key.upper())


def _build_parser() -> _Parser:
    parser = _Parser(prog="atlas-opt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-synth": (cmd_gen_synth, "generate a synthetic base-to-new task"),
        "gen-csl": (cmd_gen_csl, "write the offline class-wise soft-label table"),
        "gen-isl": (cmd_gen_isl, "write the offline instance-wise soft-label table"),
        "train": (cmd_train, "run one training configuration"),
        "eval": (cmd_eval, "evaluate a trained prompt on the test split"),
        "ablate": (cmd_ablate, "run the supervision-mode ablation grid"),
        "sweep": (cmd_sweep, "sweep one hyperparameter over a grid"),
        "diagnose": (cmd_diagnose, "estimate constants and check the bounds"),
        "report": (cmd_report, "merge result CSVs and emit an SVG"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "report":
            p.add_argument("--inputs", nargs="+", default=None, help="CSV files to merge")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        kernels.apply_thread_cap()
        return args.fn(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
