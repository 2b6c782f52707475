"""Comparison protocols built from the same shuffle machinery.

* uniform MM: every user is treated as holding the strictest level.
* SepMM: each level's users run their own single-level instance; the
  per-segment estimates are averaged uniformly or by signal-to-noise weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from segshuffle import optimize
from segshuffle.data import Dataset
from segshuffle.optimize import ProtocolParams, SegmentedConfig
from segshuffle.protocol import EstimateResult, as_arrays, run_protocol


class BaselineKind(str, Enum):
    UNIFORM_MM = "uniform_mm"
    SEPMM = "sepmm"
    WEIGHTED_SEPMM = "weighted_sepmm"


@dataclass(frozen=True)
class BaselineSpec:
    kind: BaselineKind
    uniform_level: Optional[float] = None

    def __post_init__(self):
        if (self.kind is BaselineKind.UNIFORM_MM) != (self.uniform_level is not None):
            raise ValueError("uniform_level is required for, and only for, uniform MM")


class EmptySegmentError(ValueError):
    pass


@dataclass
class BaselineRun:
    """A baseline's combined estimate plus the parameters each instance used."""

    result: EstimateResult
    params: list[ProtocolParams]
    populations: list[int]
    weights: Optional[np.ndarray] = None


def segment_seed(seed: int, level_index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(level_index,)).generate_state(1)[0])


def _single(items: np.ndarray, config: SegmentedConfig, level: float, seed: int,
            m_override: Optional[float], grid_points: int):
    n = items.shape[0]
    single = config.single_level(level, population=n)
    params = optimize.optimize_parameters(single, grid_points=grid_points,
                                          m_override=m_override)
    data = Dataset(items=items, domain_size=config.domain_size)
    return run_protocol(data, single, params, seed), params


def run_uniform_mm(records, config: SegmentedConfig, seed: int,
                   m_override: Optional[float] = None,
                   grid_points: int = 32) -> BaselineRun:
    """All users pinned to the strictest level ``E_1``."""
    items, _ = as_arrays(records)
    result, params = _single(items, config, config.levels[0], segment_seed(seed, 1),
                             m_override, grid_points)
    return BaselineRun(result=result, params=[params], populations=[items.shape[0]])


def sepmm_weights(config: SegmentedConfig, populations: Sequence[int]) -> np.ndarray:
    """Normalized weights ``1/sqrt(d s^2 ln(1/delta) / (n_k E_k)^2 + s/n_k)``."""
    d, s = config.domain_size, config.set_size
    raw = np.array([
        1.0 / math.sqrt(d * s * s * math.log(1.0 / config.delta) / (n_k * e_k) ** 2 + s / n_k)
        for n_k, e_k in zip(populations, config.levels)])
    return raw / math.fsum(raw)


def run_sepmm(records, config: SegmentedConfig, seed: int, weighted: bool = False,
              m_override: Optional[float] = None, grid_points: int = 32) -> BaselineRun:
    """Independent single-level instance per level, then (weighted) averaging."""
    items, levels = as_arrays(records)
    counts = np.bincount(levels - 1, minlength=config.num_levels)
    if np.any(counts[:config.num_levels] == 0):
        empty = int(np.flatnonzero(counts[:config.num_levels] == 0)[0]) + 1
        raise EmptySegmentError(f"no users at level {empty}")
    estimates, params, pops = [], [], []
    for k in range(1, config.num_levels + 1):
        mask = levels == k
        result, p = _single(items[mask], config, config.levels[k - 1],
                            segment_seed(seed, k),
                            m_override, grid_points)
        estimates.append(result)
        params.append(p)
        pops.append(int(mask.sum()))
    if weighted:
        weights = sepmm_weights(config, pops)
    else:
        weights = np.full(len(pops), 1.0 / len(pops))
    combined = sum(w * r.estimates for w, r in zip(weights, estimates))
    raw = sum(r.raw_counts for r in estimates)
    result = EstimateResult(estimates=combined, raw_counts=raw,
                            denominator=math.fsum(r.denominator for r in estimates),
                            blanket_expectation=math.fsum(
                                r.blanket_expectation for r in estimates))
    return BaselineRun(result=result, params=params, populations=pops, weights=weights)
