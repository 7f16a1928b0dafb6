"""Dataless magnitude pruning and the submodel cascade.

Only weight-matrix entries are prunable; biases are always kept. Two
threshold semantics are available:

``quantile``
    threshold ``t`` removes the ``floor(t * P)`` smallest-magnitude weights
    (``P`` prunable weights), ties broken by flat index.
``maxnorm``
    threshold ``t`` removes every weight with ``|w| < t * max|w|``.

Both are nested in ``t``: a higher threshold prunes a superset of
coordinates. Cascade masks are therefore computed independently from the
trained dense weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .nn import NetworkSpec, ParamSet

CASCADE_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


class PruneMode(str, Enum):
    QUANTILE = "quantile"
    MAXNORM = "maxnorm"


class PruningError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mask:
    """Keep-flags for the prunable (weight) coordinates, in flat order."""

    spec: NetworkSpec
    keep: np.ndarray

    def __post_init__(self):
        keep = np.array(self.keep, dtype=bool, copy=True).reshape(-1)
        if keep.size != self.spec.n_prunable:
            raise ValueError(f"mask has {keep.size} entries, expected {self.spec.n_prunable}")
        keep.flags.writeable = False
        object.__setattr__(self, "keep", keep)

    @classmethod
    def ones(cls, spec: NetworkSpec) -> Mask:
        return cls(spec, np.ones(spec.n_prunable, dtype=bool))

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> Mask:
        return cls(spec, np.zeros(spec.n_prunable, dtype=bool))

    def full(self) -> np.ndarray:
        """Keep-flags over every parameter, biases set."""
        out = np.ones(self.spec.n_params, dtype=bool)
        out[self.spec.weight_index] = self.keep
        return out

    @property
    def n_pruned(self) -> int:
        return int(self.keep.size - np.count_nonzero(self.keep))

    @property
    def n_trainable(self) -> int:
        """Parameters a device must hold and train: kept weights plus all biases."""
        return self.spec.n_params - self.n_pruned

    def pruned_index(self) -> np.ndarray:
        return self.spec.weight_index[~self.keep]

    def equals(self, other: Mask) -> bool:
        return self.spec == other.spec and np.array_equal(self.keep, other.keep)


@dataclass(frozen=True, eq=False)
class SubModel:
    threshold: float
    params: ParamSet
    mask: Mask

    @property
    def global_sparsity(self) -> float:
        return global_sparsity(self.params)

    @property
    def n_trainable(self) -> int:
        return self.mask.n_trainable


def _check_congruent(params: ParamSet, mask: Mask):
    if params.spec != mask.spec:
        raise ValueError("mask and parameters belong to different networks")


def prune_count(threshold: float, n_prunable: int) -> int:
    # guards against 0.3 * P landing a hair below an integer
    return min(n_prunable, math.floor(threshold * n_prunable + 1e-9))


def threshold_mask(params: ParamSet, threshold: float, mode: PruneMode | str = PruneMode.QUANTILE) -> Mask:
    if not 0.0 < threshold < 1.0:
        raise PruningError(f"threshold must lie in (0, 1), got {threshold}")
    mode = PruneMode(mode)
    magnitude = np.abs(params.flat[params.spec.weight_index])
    keep = np.ones(magnitude.size, dtype=bool)
    if mode is PruneMode.QUANTILE:
        k = prune_count(threshold, magnitude.size)
        keep[np.argsort(magnitude, kind="stable")[:k]] = False
    else:
        top = magnitude.max()
        if top == 0.0:
            raise PruningError("max-normalized pruning is undefined for all-zero weights")
        keep &= ~(magnitude < threshold * top)
    return Mask(params.spec, keep)


def apply_mask(params: ParamSet, mask: Mask) -> ParamSet:
    _check_congruent(params, mask)
    flat = params.flat.copy()
    flat[mask.pruned_index()] = 0.0
    return ParamSet(params.spec, flat)


def global_sparsity(params: ParamSet) -> float:
    """Percentage of exactly-zero parameters, biases included."""
    return 100.0 * float(np.count_nonzero(params.flat == 0.0)) / params.n_params


def generate_submodels(params: ParamSet, mode: PruneMode | str = PruneMode.QUANTILE) -> list[SubModel]:
    """Nine submodels at thresholds 0.1..0.9, each pruned from ``params``."""
    cascade = []
    for t in CASCADE_THRESHOLDS:
        mask = threshold_mask(params, t, mode)
        cascade.append(SubModel(t, apply_mask(params, mask), mask))
    return cascade


def generate_submodels_cumulative(params: ParamSet, mode: PruneMode | str = PruneMode.QUANTILE) -> list[SubModel]:
    """Literal pruning loop: each threshold is applied to the previous result.

    The nested-mask property makes this agree with :func:`generate_submodels`;
    it is kept as an independent route for checking that.
    """
    spec = params.spec
    widx = spec.weight_index
    current = params.flat.copy()
    pruned = np.zeros(spec.n_prunable, dtype=bool)
    cascade = []
    for t in CASCADE_THRESHOLDS:
        magnitude = np.abs(current[widx])
        if PruneMode(mode) is PruneMode.QUANTILE:
            k = prune_count(t, spec.n_prunable)
            hit = np.zeros(spec.n_prunable, dtype=bool)
            hit[np.argsort(magnitude, kind="stable")[:k]] = True
        else:
            top = magnitude.max()
            if top == 0.0:
                raise PruningError("max-normalized pruning is undefined for all-zero weights")
            hit = magnitude < t * top
        pruned |= hit
        current[widx[pruned]] = 0.0
        mask = Mask(spec, ~pruned)
        cascade.append(SubModel(t, ParamSet(spec, current), mask))
    return cascade
