"""CSV file formats for datasets, soft-label tables, and reports.

All floats are written with 17 significant digits so every file round-trips
float64 exactly; all writers emit LF newlines so repeated runs are
byte-identical. Loaders validate aggressively and name the offending line.
"""

from __future__ import annotations

import numpy as np

from .diagnostics import BoundReport
from .labels import CslTable, IslTable
from .model import ClassVocabulary, ImageSample
from .trainer import TrainReport


def fmt(x: float) -> str:
    """Full-precision decimal rendering of a float64."""
    return f"{float(x):.17g}"


def _open_out(path):
    return open(path, "w", encoding="utf-8", newline="\n")


def _check_field(value: str, what: str) -> str:
    if "," in value or "\n" in value:
        raise ValueError(f"{what} {value!r} may not contain commas or newlines")
    return value


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _parse_header(path, line: str, kind: str, keys: tuple[str, ...]) -> dict[str, str]:
    parts = line.split()
    if len(parts) != 2 + len(keys) or parts[0] != "#" or parts[1] != kind:
        raise ValueError(f"{path}:1: expected header '# {kind} ...', got {line!r}")
    out = {}
    for token, key in zip(parts[2:], keys):
        prefix = key + "="
        if not token.startswith(prefix):
            raise ValueError(f"{path}:1: expected '{key}=<value>', got {token!r}")
        out[key] = token[len(prefix) :]
    return out


def _parse_floats(path, lineno: int, fields: list[str], expected: int, what: str) -> np.ndarray:
    if len(fields) != expected:
        raise ValueError(
            f"{path}:{lineno}: expected {expected} {what} values, got {len(fields)}"
        )
    try:
        vals = np.array([float(f) for f in fields], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}:{lineno}: bad float ({exc})")
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{path}:{lineno}: non-finite value")
    return vals


# --- image embeddings -------------------------------------------------------


def write_image_embeddings(path, samples, num_classes: int):
    """`# images C=<int> d=<int>` then rows `id,label,e_0,...,e_{d-1}`."""
    if not samples:
        raise ValueError("refusing to write an empty image dataset")
    dim = samples[0].embedding.size
    with _open_out(path) as fh:
        fh.write(f"# images C={num_classes} d={dim}\n")
        for s in samples:
            _check_field(s.id, "sample id")
            if s.embedding.size != dim:
                raise ValueError(f"sample {s.id!r} has dim {s.embedding.size}, not {dim}")
            if not 0 <= s.label < num_classes:
                raise ValueError(f"sample {s.id!r} label {s.label} outside [0, {num_classes})")
            vals = ",".join(fmt(x) for x in s.embedding)
            fh.write(f"{s.id},{s.label},{vals}\n")


def load_image_embeddings(path) -> list[ImageSample]:
    """Parse and validate an image-embedding file."""
    lines = _read_lines(path)
    if not lines:
        raise ValueError(f"{path}:1: empty file")
    header = _parse_header(path, lines[0], "images", ("C", "d"))
    num_classes, dim = int(header["C"]), int(header["d"])
    if num_classes < 1 or dim < 1:
        raise ValueError(f"{path}:1: C and d must be positive")
    samples: list[ImageSample] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 2 + dim:
            raise ValueError(
                f"{path}:{lineno}: expected {2 + dim} fields, got {len(fields)}"
            )
        sid = fields[0]
        if sid in seen:
            raise ValueError(f"{path}:{lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        try:
            label = int(fields[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad label {fields[1]!r}")
        if not 0 <= label < num_classes:
            raise ValueError(
                f"{path}:{lineno}: label {label} outside [0, {num_classes})"
            )
        emb = _parse_floats(path, lineno, fields[2:], dim, "embedding")
        samples.append(ImageSample(id=sid, embedding=emb, label=label))
    if not samples:
        raise ValueError(f"{path}: no sample rows")
    return samples


# --- class text embeddings --------------------------------------------------


def write_class_embeddings(path, vocab: ClassVocabulary):
    """`# class_texts C=<int> d=<int>` then rows `class_index,class_name,e_0,...`."""
    num_classes, dim = vocab.tokens.shape
    with _open_out(path) as fh:
        fh.write(f"# class_texts C={num_classes} d={dim}\n")
        for c in range(num_classes):
            _check_field(vocab.names[c], "class name")
            vals = ",".join(fmt(x) for x in vocab.tokens[c])
            fh.write(f"{c},{vocab.names[c]},{vals}\n")


def load_class_embeddings(path) -> ClassVocabulary:
    lines = _read_lines(path)
    if not lines:
        raise ValueError(f"{path}:1: empty file")
    header = _parse_header(path, lines[0], "class_texts", ("C", "d"))
    num_classes, dim = int(header["C"]), int(header["d"])
    if num_classes < 2 or dim < 1:
        raise ValueError(f"{path}:1: need C >= 2 and d >= 1")
    tokens = np.full((num_classes, dim), np.nan)
    names = [""] * num_classes
    seen: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 2 + dim:
            raise ValueError(
                f"{path}:{lineno}: expected {2 + dim} fields, got {len(fields)}"
            )
        try:
            idx = int(fields[0])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad class index {fields[0]!r}")
        if not 0 <= idx < num_classes:
            raise ValueError(f"{path}:{lineno}: class index {idx} outside [0, {num_classes})")
        if idx in seen:
            raise ValueError(f"{path}:{lineno}: duplicate class index {idx}")
        seen.add(idx)
        names[idx] = fields[1]
        tokens[idx] = _parse_floats(path, lineno, fields[2:], dim, "embedding")
    if len(seen) != num_classes:
        missing = sorted(set(range(num_classes)) - seen)
        raise ValueError(f"{path}: missing class indices {missing}")
    return ClassVocabulary(tokens=tokens, names=names)


# --- soft-label tables ------------------------------------------------------


def write_csl(path, table: CslTable):
    """`# csl C=<int> tau_c=<float>` then C rows of C decimals."""
    with _open_out(path) as fh:
        fh.write(f"# csl C={table.num_classes} tau_c={fmt(table.tau_c)}\n")
        for row in table.matrix:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def load_csl(path) -> CslTable:
    lines = _read_lines(path)
    if not lines:
        raise ValueError(f"{path}:1: empty file")
    header = _parse_header(path, lines[0], "csl", ("C", "tau_c"))
    num_classes = int(header["C"])
    tau_c = float(header["tau_c"])
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        rows.append(_parse_floats(path, lineno, line.split(","), num_classes, "matrix"))
    if len(rows) != num_classes:
        raise ValueError(f"{path}: expected {num_classes} matrix rows, got {len(rows)}")
    return CslTable(matrix=np.stack(rows), tau_c=tau_c)


def write_isl(path, table: IslTable):
    """`# isl alpha=<float>` then rows `sample_id,p_0,...,p_{C-1}`.

    The rectification flag is a build-time switch and is not persisted.
    """
    with _open_out(path) as fh:
        fh.write(f"# isl alpha={fmt(table.alpha)}\n")
        for sid, probs in table.labels.items():
            _check_field(sid, "sample id")
            fh.write(f"{sid}," + ",".join(fmt(x) for x in probs) + "\n")


def load_isl(path) -> IslTable:
    lines = _read_lines(path)
    if not lines:
        raise ValueError(f"{path}:1: empty file")
    header = _parse_header(path, lines[0], "isl", ("alpha",))
    alpha = float(header["alpha"])
    labels: dict[str, np.ndarray] = {}
    width = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) < 2:
            raise ValueError(f"{path}:{lineno}: expected sample_id plus probabilities")
        sid = fields[0]
        if sid in labels:
            raise ValueError(f"{path}:{lineno}: duplicate sample id {sid!r}")
        if width is None:
            width = len(fields) - 1
        labels[sid] = _parse_floats(path, lineno, fields[1:], width, "probability")
    if not labels:
        raise ValueError(f"{path}: no label rows")
    return IslTable(labels=labels, alpha=alpha, force_delta=None)


# --- training / diagnostics reports -----------------------------------------

TRAIN_REPORT_COLUMNS = ("epoch", "xi", "mean_loss", "mean_sq_grad_norm", "train_acc")


def write_train_report(path, report: TrainReport):
    with _open_out(path) as fh:
        fh.write(",".join(TRAIN_REPORT_COLUMNS) + "\n")
        for e in range(report.xi.size):
            fh.write(
                f"{e},{int(report.xi[e])},{fmt(report.mean_loss[e])},"
                f"{fmt(report.mean_sq_grad_norm[e])},{fmt(report.train_acc[e])}\n"
            )


BOUND_REPORT_COLUMNS = (
    "atlas_bound",
    "ls_bound",
    "measured_avg_sq_grad",
    "trajectory_pass",
    "alternating_dev_lhs",
    "alternating_dev_rhs",
    "alternating_dev_pass",
    "smoothed_dev_lhs",
    "smoothed_dev_rhs",
    "smoothed_dev_pass",
    "kappa",
    "sigma2",
    "beta_hat",
    "f0",
    "eta",
    "steps",
    "theta",
    "K",
)


def write_bound_report(path, report: BoundReport):
    vals = (
        fmt(report.atlas_bound),
        fmt(report.ls_bound),
        fmt(report.measured_avg_sq_grad),
        str(report.trajectory_pass).lower(),
        fmt(report.alternating_dev_lhs),
        fmt(report.alternating_dev_rhs),
        str(report.alternating_dev_pass).lower(),
        fmt(report.smoothed_dev_lhs),
        fmt(report.smoothed_dev_rhs),
        str(report.smoothed_dev_pass).lower(),
        fmt(report.kappa),
        fmt(report.sigma2),
        fmt(report.beta_hat),
        fmt(report.f0),
        fmt(report.eta),
        str(report.steps),
        fmt(report.theta),
        str(report.period),
    )
    with _open_out(path) as fh:
        fh.write(",".join(BOUND_REPORT_COLUMNS) + "\n")
        fh.write(",".join(vals) + "\n")


def write_prompt(path, v: np.ndarray):
    """`# prompt M=<int> d_p=<int>` then one row per prompt vector."""
    v = np.asarray(v, dtype=np.float64)
    with _open_out(path) as fh:
        fh.write(f"# prompt M={v.shape[0]} d_p={v.shape[1]}\n")
        for row in v:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def load_prompt(path) -> np.ndarray:
    lines = _read_lines(path)
    if not lines:
        raise ValueError(f"{path}:1: empty file")
    header = _parse_header(path, lines[0], "prompt", ("M", "d_p"))
    m, d_p = int(header["M"]), int(header["d_p"])
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        rows.append(_parse_floats(path, lineno, line.split(","), d_p, "prompt"))
    if len(rows) != m:
        raise ValueError(f"{path}: expected {m} prompt rows, got {len(rows)}")
    return np.stack(rows)


# --- generic result tables ---------------------------------------------------


def write_rows(path, columns: tuple[str, ...], rows: list[dict]):
    """Write dict rows under a fixed column order; floats at full precision."""
    with _open_out(path) as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            rendered = []
            for col in columns:
                val = row[col]
                if isinstance(val, float):
                    rendered.append(fmt(val))
                else:
                    rendered.append(_check_field(str(val), f"column {col}"))
            fh.write(",".join(rendered) + "\n")


def read_rows(path) -> tuple[list[str], list[dict]]:
    lines = _read_lines(path)
    if not lines:
        raise ValueError(f"{path}:1: empty file")
    columns = lines[0].split(",")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != len(columns):
            raise ValueError(
                f"{path}:{lineno}: expected {len(columns)} fields, got {len(fields)}"
            )
        rows.append(dict(zip(columns, fields)))
    return columns, rows
