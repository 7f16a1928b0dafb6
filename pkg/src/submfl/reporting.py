"""Checkpoints, metrics CSV files and run summaries.

Every file is written to a temporary sibling and renamed into place, so a
failure never leaves a half-written output behind.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .federation import RoundReport
from .nn import NetworkSpec, ParamSet
from .orchestrator import COMPARISON_COLUMNS, CascadeReport, ComparisonTable
from .pruning import Mask

CHECKPOINT_FORMAT = "submfl-checkpoint"
CHECKPOINT_VERSION = 1
METRICS_HEADER = ("stage", "threshold", "round", "accuracy", "loss", "participation", "global_sparsity", "skipped")


_UMASK = os.umask(0)
os.umask(_UMASK)


class CheckpointError(ValueError):
    pass


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# -- checkpoints ---------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ParamSet
    mask: Mask | None = None
    stage: str = ""
    seed: int | None = None
    config_hash: str = ""

    @property
    def spec(self) -> NetworkSpec:
        return self.params.spec


def checkpoint_to_text(ckpt: Checkpoint) -> str:
    """One JSON document, one top-level key per line.

    Floats are written by ``json`` as their shortest round-tripping decimal.
    """
    fields = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "network": {"layer_sizes": list(ckpt.spec.layer_sizes), "activation": ckpt.spec.activation},
        "provenance": {"stage": ckpt.stage, "seed": ckpt.seed, "config_hash": ckpt.config_hash},
        "mask": None if ckpt.mask is None else "".join("1" if k else "0" for k in ckpt.mask.keep),
        "params": ckpt.params.flat.tolist(),
    }
    body = ",\n".join(f" {json.dumps(k)}: {json.dumps(v)}" for k, v in fields.items())
    return "{\n" + body + "\n}\n"


def checkpoint_from_text(text: str) -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        spec = NetworkSpec(tuple(doc["network"]["layer_sizes"]), doc["network"].get("activation", "relu"))
        values = np.array(doc["params"], dtype=np.float64).reshape(-1)
        if values.size != spec.n_params:
            raise CheckpointError(f"checkpoint holds {values.size} parameters, network needs {spec.n_params}")
        params = ParamSet(spec, values)
        mask = None
        if doc.get("mask") is not None:
            bits = doc["mask"]
            if len(bits) != spec.n_prunable or set(bits) - {"0", "1"}:
                raise CheckpointError("mask must be a 0/1 string with one bit per weight")
            mask = Mask(spec, np.frombuffer(bits.encode(), dtype=np.uint8) == ord("1"))
        prov = doc.get("provenance", {})
        return Checkpoint(params, mask, prov.get("stage", ""), prov.get("seed"), prov.get("config_hash", ""))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc


def save_checkpoint(path, ckpt: Checkpoint):
    atomic_write_text(path, checkpoint_to_text(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    return checkpoint_from_text(text)


# -- per-round metrics ------------------------------------------------------------


@dataclass
class MetricsRow:
    stage: str
    threshold: float
    round: int
    accuracy: float
    loss: float
    participation: int
    global_sparsity: float
    skipped: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.accuracy) and math.isfinite(self.loss) and math.isfinite(self.global_sparsity)):
            raise ValueError("metrics must be finite")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def metrics_rows(report: CascadeReport) -> list[MetricsRow]:
    out = []
    thresholds = {row.stage: row.threshold for row in report.rows}
    for stage, rounds in report.rounds.items():
        out.extend(round_rows(stage, thresholds[stage], rounds))
    return out


def round_rows(stage: str, threshold: float, rounds: list[RoundReport]) -> list[MetricsRow]:
    return [
        MetricsRow(stage, threshold, r.round, r.accuracy, r.loss, len(r.participants),
                   r.global_sparsity, r.skipped)
        for r in rounds
    ]


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in rows:
        writer.writerow([
            r.stage, f"{r.threshold:.6f}", r.round, f"{r.accuracy:.6f}", f"{r.loss:.6f}",
            r.participation, f"{r.global_sparsity:.6f}", int(r.skipped),
        ])
    return buf.getvalue()


def write_metrics_csv(path, rows):
    atomic_write_text(path, metrics_to_csv(rows))


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        return [
            MetricsRow(s, float(t), int(r), float(a), float(l), int(p), float(gs), bool(int(sk)))
            for s, t, r, a, l, p, gs, sk in reader
        ]


# -- comparison table ---------------------------------------------------------------


def _format_cell(column: str, value) -> str:
    if column == "T":
        return f"{value:.1f}"
    if column.endswith(" P"):
        return str(int(value))
    return f"{value:.4f}"


def comparison_to_csv(table: ComparisonTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("model",) + tuple(table.columns))
    for label, row in zip(table.labels, table.rows):
        writer.writerow([label] + [_format_cell(col, row[col]) for col in table.columns])
    return buf.getvalue()


def read_comparison_csv(path) -> ComparisonTable:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header[1:]) != COMPARISON_COLUMNS:
            raise ValueError(f"unexpected comparison header {header}")
        labels, rows = [], []
        for cells in reader:
            labels.append(cells[0])
            rows.append({
                col: int(v) if col.endswith(" P") else float(v)
                for col, v in zip(COMPARISON_COLUMNS, cells[1:])
            })
    return ComparisonTable(labels, rows)


def render_table(table: ComparisonTable) -> str:
    """Plain-text rendering for terminals."""
    lines = [["model", *table.columns]]
    for label, row in zip(table.labels, table.rows):
        lines.append([label] + [_format_cell(col, row[col]) for col in table.columns])
    widths = [max(len(line[i]) for line in lines) for i in range(len(lines[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in lines) + "\n"


def summary_json(config, submfl: CascadeReport, sfl: CascadeReport, table: ComparisonTable, timing=None) -> str:
    doc = {
        "config": config.to_text().splitlines(),
        "config_hash": config.digest(),
        "submfl": [asdict(r) for r in submfl.rows],
        "sfl": [asdict(r) for r in sfl.rows],
        "comparison": [dict(model=label, **row) for label, row in zip(table.labels, table.rows)],
    }
    if timing is not None:
        doc["timing_seconds"] = timing
    return json.dumps(doc, indent=2) + "\n"
