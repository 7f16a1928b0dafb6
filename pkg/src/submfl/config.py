"""Experiment configuration and its flat ``key = value`` file format.

One setting per line, ``#`` starts a comment, blank lines are ignored.
List values (``layer_sizes``) are comma separated. Relative paths are
resolved against the directory of the config file. Every key is optional;
see :class:`ExperimentConfig` for defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .nn import Hyperparams, NetworkSpec
from .pruning import PruneMode


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    layer_sizes: tuple[int, ...] = (784, 128, 10)
    # "idx" or "synthetic"
    dataset: str = "idx"
    images: str = ""
    labels: str = ""
    # 0 keeps every sample
    subset: int = 0
    synthetic_n: int = 2000
    synthetic_classes: int = 10
    synthetic_dim: int = 20
    synthetic_separation: float = 6.0
    validation_fraction: float = 0.1
    n_devices: int = 100
    dense_capable_fraction: float = 0.1
    availability_fraction: float = 0.3
    rounds: int = 30
    min_fit_clients: int = 3
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 64
    local_epochs: int = 3
    pruning_mode: str = "quantile"
    capacity_distribution: str = "uniform"
    target_acc_low: float = 0.70
    target_acc_high: float = 0.99
    seed: int = 0
    out_dir: str = "runs/latest"
    workers: int = 1

    def __post_init__(self):
        for name in ("dense_capable_fraction", "availability_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if self.n_devices < 1:
            raise ConfigError("n_devices must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.dataset not in ("idx", "synthetic"):
            raise ConfigError(f"dataset must be 'idx' or 'synthetic', got {self.dataset!r}")
        if self.capacity_distribution not in ("uniform", "loguniform"):
            raise ConfigError(f"unknown capacity_distribution {self.capacity_distribution!r}")
        if not 0.0 <= self.target_acc_low <= self.target_acc_high <= 1.0:
            raise ConfigError("target accuracy bounds must satisfy 0 <= low <= high <= 1")
        try:
            PruneMode(self.pruning_mode)
            self.network
            self.hyperparams
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def network(self) -> NetworkSpec:
        return NetworkSpec(self.layer_sizes)

    @property
    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            local_epochs=self.local_epochs,
        )

    @property
    def mode(self) -> PruneMode:
        return PruneMode(self.pruning_mode)

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of every setting that can change results (excludes out_dir, workers)."""
        text = self.replace(out_dir="", workers=1).to_text()
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_PATH_KEYS = {"images", "labels", "out_dir"}


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    kind = types[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def parse_assignments(pairs, base_dir: Path | None = None) -> dict:
    out = {}
    for lineno, line in pairs:
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        value = _coerce(key, raw)
        if key in _PATH_KEYS and value and base_dir is not None and not Path(value).is_absolute():
            value = str((base_dir / value).resolve())
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if line:
                pairs.append((lineno, line))
        values = parse_assignments(pairs, path.parent)
    for key, value in (overrides or {}).items():
        if key not in {f.name for f in fields(ExperimentConfig)}:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value) if isinstance(value, str) else value
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
