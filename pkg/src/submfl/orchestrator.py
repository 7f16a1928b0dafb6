"""End-to-end cascade: train the dense model, prune, train submodels densest-first.

Also runs the random-sparse baseline (fresh random weights pruned at the
same thresholds, never trained) and merges both arms into one table.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, Partition, holdout_split, load_idx, partition_equal, synthetic_blobs
from .federation import (
    DevicePopulation,
    FederationConfig,
    RoundReport,
    drop_devices,
    eligible_devices,
    sample_population,
    train_model_on_devices,
)
from .nn import ParamSet, evaluate, init_network
from .pruning import CASCADE_THRESHOLDS, Mask, prune_count, apply_mask, generate_submodels, global_sparsity, threshold_mask

logger = logging.getLogger(__name__)

_TAG_INIT = 100
_TAG_SPLIT = 101
_TAG_PARTITION = 102
_TAG_SUBSET = 103
_TAG_SYNTHETIC = 104
_TAG_SFL = 105

COMPARISON_COLUMNS = (
    "T",
    "S-FL Acc",
    "subMFL Acc",
    "S-FL Loss",
    "subMFL Loss",
    "S-FL P",
    "subMFL P",
    "S-FL GS",
    "subMFL GS",
)


class ReportError(ValueError):
    pass


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def stage_label(i: int) -> str:
    return "GM" if i == 0 else f"sm{i}"


@dataclass
class CascadeRow:
    stage: str
    threshold: float
    pre_acc: float
    pre_loss: float
    acc: float
    loss: float
    participation: int
    eligible: int
    active: int
    dropped: int
    global_sparsity: float
    rounds_executed: int


@dataclass
class CascadeReport:
    arm: str
    rows: list[CascadeRow]
    rounds: dict[str, list[RoundReport]] = field(default_factory=dict)
    # stage -> (params, mask) after that stage's training
    models: dict[str, tuple[ParamSet, Mask]] = field(default_factory=dict)


@dataclass
class Experiment:
    """Everything derived from a config before any training happens."""

    config: ExperimentConfig
    train: Dataset
    holdout: Dataset
    partition: Partition
    population: DevicePopulation

    @property
    def spec(self):
        return self.config.network


def load_dataset(config: ExperimentConfig) -> Dataset:
    n_classes = config.layer_sizes[-1]
    if config.dataset == "synthetic":
        ds = synthetic_blobs(
            config.synthetic_n,
            config.synthetic_classes,
            config.synthetic_dim,
            config.synthetic_separation,
            derive_seed(config.seed, _TAG_SYNTHETIC),
        )
    else:
        ds = load_idx(config.images, config.labels, n_classes)
    if config.subset and config.subset < len(ds):
        rng = np.random.default_rng(derive_seed(config.seed, _TAG_SUBSET))
        ds = ds.subset(np.sort(rng.choice(len(ds), config.subset, replace=False)))
    return ds


def sm9_trainable(spec) -> int:
    """Trainable-parameter count of the sparsest quantile submodel."""
    return spec.n_params - prune_count(CASCADE_THRESHOLDS[-1], spec.n_prunable)


def prepare(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> Experiment:
    spec = config.network
    ds = load_dataset(config) if dataset is None else dataset
    if ds.dim != spec.n_inputs:
        raise ValueError(f"dataset has {ds.dim} features but the network expects {spec.n_inputs}")
    train, holdout = holdout_split(ds, config.validation_fraction, derive_seed(config.seed, _TAG_SPLIT))
    partition = partition_equal(train, config.n_devices, derive_seed(config.seed, _TAG_PARTITION))
    population = sample_population(
        config.n_devices,
        config.dense_capable_fraction,
        spec.n_params,
        sm9_trainable(spec),
        config.capacity_distribution,
        (config.target_acc_low, config.target_acc_high),
        config.seed,
    )
    return Experiment(config, train, holdout, partition, population)


def _fed_config(config: ExperimentConfig, stage: int) -> FederationConfig:
    return FederationConfig(
        availability_fraction=config.availability_fraction,
        min_fit_clients=config.min_fit_clients,
        workers=config.workers,
        seed=config.seed,
        stage=stage,
        label=stage_label(stage),
    )


def run_submfl(
    experiment: Experiment,
    on_round: Optional[Callable[[str, RoundReport, ParamSet], None]] = None,
) -> CascadeReport:
    cfg = experiment.config
    spec = cfg.network
    hyper = cfg.hyperparams
    holdout = experiment.holdout
    population = experiment.population

    def train(stage: int, params: ParamSet, mask: Mask):
        label = stage_label(stage)
        callback = None if on_round is None else (lambda rep, p: on_round(label, rep, p))
        trained, reports = train_model_on_devices(
            params, mask, population, experiment.partition, experiment.train, holdout,
            cfg.rounds, hyper, _fed_config(cfg, stage), callback,
        )
        return trained, reports

    def row(stage, threshold, pre, post, mask, reports, dropped):
        pre_loss, pre_acc = pre
        loss, acc = post
        trained = sum(not r.skipped for r in reports)
        return CascadeRow(
            stage=stage_label(stage),
            threshold=threshold,
            pre_acc=pre_acc,
            pre_loss=pre_loss,
            acc=acc,
            loss=loss,
            participation=len(eligible_devices(population, mask.n_trainable)),
            eligible=sum(d.capacity >= mask.n_trainable for d in population),
            active=len(population.active),
            dropped=dropped,
            global_sparsity=global_sparsity(models[stage_label(stage)][0]),
            rounds_executed=trained,
        )

    report = CascadeReport("subMFL", [])
    models = report.models
    start = time.perf_counter()

    gm = init_network(spec, derive_seed(cfg.seed, _TAG_INIT))
    dense = Mask.ones(spec)
    pre = evaluate(gm, holdout.features, holdout.labels)
    gm, reports = train(0, gm, dense)
    post = evaluate(gm, holdout.features, holdout.labels)
    models["GM"] = (gm, dense)
    report.rounds["GM"] = reports
    report.rows.append(row(0, 0.0, pre, post, dense, reports, 0))
    logger.info("GM trained: acc %.4f (pre %.4f)", post[1], pre[1])

    latest_acc = post[1]
    for i, sub in enumerate(generate_submodels(gm, cfg.mode), start=1):
        before = len(population.active)
        population = drop_devices(population, latest_acc)
        dropped = before - len(population.active)
        pre = evaluate(sub.params, holdout.features, holdout.labels)
        if eligible_devices(population, sub.n_trainable):
            params, reports = train(i, sub.params, sub.mask)
        else:
            logger.warning("%s: every eligible device has dropped out; not trained", stage_label(i))
            params, reports = sub.params, []
        post = evaluate(params, holdout.features, holdout.labels)
        models[stage_label(i)] = (params, sub.mask)
        report.rounds[stage_label(i)] = reports
        report.rows.append(row(i, sub.threshold, pre, post, sub.mask, reports, dropped))
        latest_acc = post[1]
        logger.info(
            "%s (T=%.1f): pre %.4f post %.4f, P=%d, GS=%.2f",
            stage_label(i), sub.threshold, pre[1], post[1],
            report.rows[-1].participation, report.rows[-1].global_sparsity,
        )
    logger.info("cascade finished in %.1fs", time.perf_counter() - start)
    return report


def run_sfl_baseline(experiment: Experiment) -> CascadeReport:
    """Fresh random weights pruned at each threshold and evaluated untrained.

    The threshold-0 model reuses the dense model's initialisation seed, so it
    matches the untrained row of the cascade exactly.
    """
    cfg = experiment.config
    spec = cfg.network
    holdout = experiment.holdout
    rows = []
    models = {}
    for i, threshold in enumerate((0.0,) + CASCADE_THRESHOLDS):
        seed = derive_seed(cfg.seed, _TAG_INIT) if i == 0 else derive_seed(cfg.seed, _TAG_SFL, i)
        params = init_network(spec, seed)
        mask = Mask.ones(spec) if i == 0 else threshold_mask(params, threshold, cfg.mode)
        params = apply_mask(params, mask)
        loss, acc = evaluate(params, holdout.features, holdout.labels)
        eligible = len(eligible_devices(experiment.population, mask.n_trainable))
        rows.append(
            CascadeRow(stage_label(i), threshold, acc, loss, acc, loss, eligible, eligible,
                       len(experiment.population.active), 0, global_sparsity(params), 0)
        )
        models[stage_label(i)] = (params, mask)
    return CascadeReport("S-FL", rows, models=models)


@dataclass
class ComparisonTable:
    labels: list[str]
    rows: list[dict]
    columns: tuple[str, ...] = COMPARISON_COLUMNS


def compare_reports(submfl: CascadeReport | list[CascadeRow], sfl: CascadeReport | list[CascadeRow]) -> ComparisonTable:
    ours = submfl.rows if isinstance(submfl, CascadeReport) else list(submfl)
    base = sfl.rows if isinstance(sfl, CascadeReport) else list(sfl)
    if len(ours) != len(base):
        raise ReportError(f"arms have {len(ours)} and {len(base)} rows")
    rows = []
    for a, b in zip(ours, base):
        if abs(a.threshold - b.threshold) > 1e-12:
            raise ReportError(f"threshold mismatch: {a.threshold} vs {b.threshold}")
        rows.append({
            "T": a.threshold,
            "S-FL Acc": b.acc,
            "subMFL Acc": a.acc,
            "S-FL Loss": b.loss,
            "subMFL Loss": a.loss,
            "S-FL P": b.participation,
            "subMFL P": a.participation,
            "S-FL GS": b.global_sparsity,
            "subMFL GS": a.global_sparsity,
        })
    return ComparisonTable([a.stage for a in ours], rows)
