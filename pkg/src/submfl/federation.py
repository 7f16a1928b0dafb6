"""Simulated device population and the FedAvg training loop."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, Partition
from .nn import AdamState, Hyperparams, ParamSet, adam_step, evaluate, loss_and_grads
from .pruning import Mask, apply_mask, global_sparsity

logger = logging.getLogger(__name__)

# stream tags keep RNG draws for different purposes independent
_TAG_POPULATION = 1
_TAG_AVAILABILITY = 2
_TAG_LOCAL = 3


class FederationError(RuntimeError):
    pass


def seed_stream(*key: int) -> np.random.Generator:
    """Generator keyed by a tuple of non-negative ints, independent of call order."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass(frozen=True)
class Device:
    id: int
    capacity: int
    target_min_acc: float
    shard_id: int
    active: bool = True

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError(f"device {self.id}: capacity must be positive")
        if not 0.0 <= self.target_min_acc <= 1.0:
            raise ValueError(f"device {self.id}: target accuracy must lie in [0, 1]")


@dataclass(frozen=True)
class DevicePopulation:
    devices: tuple[Device, ...]
    seed: int = 0

    def __post_init__(self):
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ValueError("device ids must be unique")

    def __len__(self):
        return len(self.devices)

    def __iter__(self):
        return iter(self.devices)

    @property
    def active(self) -> list[Device]:
        return [d for d in self.devices if d.active]

    def by_id(self, device_id: int) -> Device:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)


@dataclass
class RoundReport:
    round: int
    participants: list[int]
    available: list[int]
    eligible: list[int]
    active: list[int]
    train_loss: float
    loss: float
    accuracy: float
    global_sparsity: float
    duration: float = field(default=0.0, compare=False)
    skipped: bool = False


@dataclass(frozen=True)
class FederationConfig:
    availability_fraction: float = 0.3
    min_fit_clients: int = 3
    workers: int = 1
    seed: int = 0
    stage: int = 0
    label: str = "model"


_INVERSE_CDF = {
    "uniform": lambda u, lo, hi: lo + np.floor(u * (hi - lo)),
    "loguniform": lambda u, lo, hi: np.floor(np.exp(np.log(lo) + u * (np.log(hi) - np.log(lo)))),
}


def _stratified_uniforms(rng: np.random.Generator, m: int) -> np.ndarray:
    # one draw per equal-probability stratum, handed out in random order
    u = (np.arange(m) + rng.uniform(size=m)) / m
    return u[rng.permutation(m)]


def capacity_cdf(x, low: int, high: int, distribution: str = "uniform") -> np.ndarray:
    """P(capacity < x) for a non-dense device drawing integers from [low, high)."""
    x = np.asarray(x, dtype=np.float64)
    if distribution == "uniform":
        return np.clip((np.ceil(x) - low) / (high - low), 0.0, 1.0)
    if distribution == "loguniform":
        # smallest u whose floor(exp(...)) reaches x is at exp(...) = ceil(x)
        u = (np.log(np.maximum(np.ceil(x), 1.0)) - np.log(low)) / (np.log(high) - np.log(low))
        return np.clip(u, 0.0, 1.0)
    raise ValueError(f"unknown capacity distribution {distribution!r}")


def sample_population(
    n_devices: int,
    dense_capable_fraction: float,
    n_params: int,
    min_capacity: int,
    capacity_distribution: str = "uniform",
    target_acc_range: tuple[float, float] = (0.70, 0.99),
    seed: int = 0,
) -> DevicePopulation:
    """Draw a device population.

    ``round(dense_capable_fraction * n_devices)`` devices get capacity
    ``n_params``; the others draw integer capacities in
    ``[min_capacity, n_params)`` from ``capacity_distribution`` and so cannot
    hold the dense model. Capacities and target accuracies use stratified
    inverse-CDF draws, which keeps the empirical distribution within one
    device of its CDF at any point. Device ``i`` owns shard ``i``.
    """
    if n_devices < 1:
        raise ValueError("n_devices must be at least 1")
    if not 0.0 < dense_capable_fraction <= 1.0:
        raise ValueError("dense_capable_fraction must lie in (0, 1]")
    if not 0 < min_capacity < n_params:
        raise ValueError(f"capacity bounds must satisfy 0 < {min_capacity} < {n_params}")
    if capacity_distribution not in _INVERSE_CDF:
        raise ValueError(f"unknown capacity distribution {capacity_distribution!r}")
    lo_acc, hi_acc = target_acc_range
    if not 0.0 <= lo_acc <= hi_acc <= 1.0:
        raise ValueError(f"invalid target accuracy range {target_acc_range}")

    rng = seed_stream(seed, _TAG_POPULATION)
    n_dense = int(np.floor(dense_capable_fraction * n_devices + 0.5))
    order = rng.permutation(n_devices)
    capacity = np.full(n_devices, n_params, dtype=np.int64)
    rest = order[n_dense:]
    if len(rest):
        u = _stratified_uniforms(rng, len(rest))
        capacity[rest] = _INVERSE_CDF[capacity_distribution](u, min_capacity, n_params)
    targets = lo_acc + (hi_acc - lo_acc) * _stratified_uniforms(rng, n_devices)
    devices = tuple(
        Device(i, int(capacity[i]), float(targets[i]), shard_id=i) for i in range(n_devices)
    )
    return DevicePopulation(devices, seed)


def eligible_devices(population: DevicePopulation | Sequence[Device], n_trainable: int) -> list[Device]:
    """Active devices whose capacity covers a model with ``n_trainable`` parameters."""
    return [d for d in population if d.active and d.capacity >= n_trainable]


def sample_available(
    devices: Sequence[Device], availability_fraction: float, seed: int, round_index: int, stage: int = 0
) -> list[Device]:
    if not devices:
        raise FederationError("no devices to sample from")
    if not 0.0 < availability_fraction <= 1.0:
        raise ValueError("availability_fraction must lie in (0, 1]")
    pool = sorted(devices, key=lambda d: d.id)
    k = int(np.floor(availability_fraction * len(pool) + 0.5))
    if k >= len(pool):
        return pool
    rng = seed_stream(seed, _TAG_AVAILABILITY, stage, round_index)
    picked = np.sort(rng.choice(len(pool), size=k, replace=False))
    return [pool[i] for i in picked]


def local_train(
    params: ParamSet,
    mask: Mask,
    shard: Dataset,
    hyper: Hyperparams,
    rng: np.random.Generator | int,
) -> tuple[ParamSet, int, float]:
    """Mini-batch Adam on one device's shard with the mask re-applied after every step.

    Returns (updated params, shard size, mean batch loss of the last epoch).
    """
    if len(shard) < 1:
        raise FederationError("cannot train on an empty shard")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    state = AdamState.fresh(params.n_params)
    pruned = mask.pruned_index()
    x, y = shard.features, shard.labels
    last_loss = float("nan")
    for _ in range(hyper.local_epochs):
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(y), hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            loss, grads = loss_and_grads(params, x[batch], y[batch])
            params, state = adam_step(params, grads, state, hyper)
            if pruned.size:
                flat = params.flat.copy()
                flat[pruned] = 0.0
                params = params.with_flat(flat)
            losses.append(loss)
        last_loss = float(np.mean(losses))
    return params, len(y), last_loss


def fedavg(local_results: Sequence[tuple[ParamSet, int]], mask: Optional[Mask] = None) -> ParamSet:
    """Sample-weighted mean of local models, accumulated in the given order."""
    if not local_results:
        raise FederationError("nothing to aggregate")
    total = sum(int(n) for _, n in local_results)
    if total <= 0:
        raise FederationError("aggregation needs a positive total sample count")
    first = local_results[0][0]
    acc = np.zeros(first.n_params)
    for params, n in local_results:
        if params.spec != first.spec:
            raise ValueError("local models disagree on network shape")
        # weight by n / total so a single result comes back bit-for-bit
        acc += (int(n) / total) * params.flat
    merged = ParamSet(first.spec, acc)
    return apply_mask(merged, mask) if mask is not None else merged


def train_model_on_devices(
    params: ParamSet,
    mask: Mask,
    population: DevicePopulation,
    partition: Partition,
    train_set: Dataset,
    holdout: Dataset,
    rounds: int,
    hyper: Hyperparams,
    config: FederationConfig,
    on_round: Optional[Callable[[RoundReport, ParamSet], None]] = None,
) -> tuple[ParamSet, list[RoundReport]]:
    """Run ``rounds`` FedAvg rounds over the devices that can hold ``mask``'s model.

    Rounds that draw fewer than ``min_fit_clients`` devices are recorded as
    skipped and leave the global model untouched.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    params = apply_mask(params, mask)
    active = population.active
    eligible = eligible_devices(active, mask.n_trainable)
    if not eligible:
        raise FederationError(
            f"no eligible devices for {config.label} ({mask.n_trainable} trainable parameters)"
        )
    active_ids = [d.id for d in active]
    eligible_ids = [d.id for d in eligible]
    shards = {d.id: train_set.subset(partition.shards[d.shard_id]) for d in eligible}

    reports = []
    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for t in range(1, rounds + 1):
            start = time.perf_counter()
            available = sample_available(eligible, config.availability_fraction, config.seed, t, config.stage)
            available_ids = [d.id for d in available]
            if len(available) < max(1, config.min_fit_clients):
                loss, acc = evaluate(params, holdout.features, holdout.labels)
                report = RoundReport(t, [], available_ids, eligible_ids, active_ids, float("nan"),
                                     loss, acc, global_sparsity(params), time.perf_counter() - start,
                                     skipped=True)
                logger.debug("%s round %d skipped: %d available", config.label, t, len(available))
            else:
                def job(device: Device):
                    rng = seed_stream(config.seed, _TAG_LOCAL, config.stage, device.id, t)
                    return local_train(params, mask, shards[device.id], hyper, rng)

                if executor is not None:
                    results = list(executor.map(job, available))
                else:
                    results = [job(d) for d in available]
                params = fedavg([(p, n) for p, n, _ in results], mask)
                n_total = sum(n for _, n, _ in results)
                train_loss = sum(n * l for _, n, l in results) / n_total
                loss, acc = evaluate(params, holdout.features, holdout.labels)
                report = RoundReport(t, available_ids, available_ids, eligible_ids, active_ids,
                                     float(train_loss), loss, acc, global_sparsity(params),
                                     time.perf_counter() - start)
                logger.debug("%s round %d: acc %.4f loss %.4f (%d devices)",
                             config.label, t, acc, loss, len(available))
            reports.append(report)
            if on_round is not None:
                on_round(report, params)
    finally:
        if executor is not None:
            executor.shutdown()
    return params, reports


def drop_devices(population: DevicePopulation, model_accuracy: float) -> DevicePopulation:
    """Deactivate devices whose target accuracy the model already meets."""
    if not 0.0 <= model_accuracy <= 1.0:
        raise ValueError("model_accuracy must lie in [0, 1]")
    devices = tuple(
        replace(d, active=False) if d.active and d.target_min_acc <= model_accuracy else d
        for d in population.devices
    )
    return replace(population, devices=devices)
