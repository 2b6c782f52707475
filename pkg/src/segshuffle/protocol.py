"""In-process simulation of the segmented multi-message shuffle protocol.

Users report each of their ``s`` items independently with their level's
Poisson rate, add ``ceil(m)`` blanket trials that each emit a uniform item
with probability ``m / ceil(m)``, and the shuffled bag is debiased by the
server.

Randomness: a run is keyed by one root seed.  User ``i`` owns the block of
Philox outputs starting at ``i * width`` (``width`` a multiple of 4), so the
vectorized path, the per-user path and any partitioned execution draw the
same numbers for the same user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from segshuffle.optimize import ProtocolParams, SegmentedConfig


class UndefinedEstimatorError(ValueError):
    pass


class UnsupportedWitnessError(ValueError):
    pass


@dataclass(frozen=True)
class UserRecord:
    """One user's item set (1-based item indices) and 1-based level index."""

    items: tuple[int, ...]
    level_index: int = 1

    def __post_init__(self):
        items = tuple(sorted(int(t) for t in self.items))
        if len(set(items)) != len(items):
            raise ValueError(f"duplicate items in {items}")
        if any(t < 1 for t in items):
            raise ValueError("item indices are 1-based")
        if self.level_index < 1:
            raise ValueError("level indices are 1-based")
        object.__setattr__(self, "items", items)


@dataclass
class MessageMultiset:
    """Order-free view of a shuffled bag: ``counts[j-1]`` occurrences of item ``j``."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict[int, int]:
        return {j + 1: int(c) for j, c in enumerate(self.counts) if c}


@dataclass
class EstimateResult:
    estimates: np.ndarray
    raw_counts: np.ndarray
    denominator: float
    blanket_expectation: float


def as_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(items, levels)`` arrays for a record sequence or a Dataset.

    ``items`` has shape ``(n, s)`` with 1-based indices.
    """
    if isinstance(getattr(records, "levels", None), np.ndarray):
        return records.items, records.levels
    records = list(records)
    if not records:
        raise ValueError("no user records")
    sizes = {len(r.items) for r in records}
    if len(sizes) != 1:
        raise ValueError("all records must hold the same number of items")
    items = np.array([r.items for r in records], dtype=np.int64).reshape(len(records), -1)
    levels = np.array([r.level_index for r in records], dtype=np.int64)
    return items, levels


def root_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def stream_width(set_size: int, m: float) -> int:
    """Uniform draws reserved per user, rounded up to whole Philox blocks."""
    need = set_size + 2 * math.ceil(m)
    return max(4, 4 * math.ceil(need / 4))


def user_stream(seed: int, user: int, width: int) -> np.random.Generator:
    """Generator positioned at the start of ``user``'s block."""
    return np.random.Generator(np.random.Philox(key=root_key(seed)).advance(user * width // 4))


def _aux_rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag,)))


def _blanket_trials(m: float) -> tuple[int, float]:
    slots = math.ceil(m)
    return slots, (m / slots if slots else 1.0)


def _emit(items: np.ndarray, rates: np.ndarray, draws: np.ndarray, m: float,
          d: int) -> np.ndarray:
    """Messages from users given their pre-drawn uniforms (one row per user)."""
    s = items.shape[1]
    slots, gamma = _blanket_trials(m)
    item_u = draws[:, :s]
    data = items[item_u < rates[:, None]]
    if slots == 0:
        return data
    emit_u = draws[:, s:s + slots]
    pick_u = draws[:, s + slots:s + 2 * slots]
    picks = np.minimum((pick_u * d).astype(np.int64), d - 1) + 1
    blankets = picks[emit_u < gamma]
    return np.concatenate([data, blankets])


def randomize_user(record: UserRecord, params: ProtocolParams, d: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Messages sent by one user: kept items plus blanket items."""
    rate = params.poisson_rates[record.level_index - 1]
    items = np.asarray(record.items, dtype=np.int64)[None, :]
    slots, _ = _blanket_trials(params.blanket_rate)
    draws = rng.random(items.shape[1] + 2 * slots)[None, :]
    return _emit(items, np.array([rate]), draws, params.blanket_rate, d)


def randomize_all(items: np.ndarray, levels: np.ndarray, params: ProtocolParams,
                  d: int, seed: int) -> np.ndarray:
    """All users' messages concatenated; identical to per-user streams."""
    n, s = items.shape
    width = stream_width(s, params.blanket_rate)
    gen = np.random.Generator(np.random.Philox(key=root_key(seed)))
    draws = gen.random(n * width).reshape(n, width)
    rates = np.asarray(params.poisson_rates, dtype=float)[levels - 1]
    return _emit(items, rates, draws, params.blanket_rate, d)


def aggregate_levels(levels, num_levels: Optional[int] = None,
                     rng: Optional[np.random.Generator] = None) -> tuple[float, ...]:
    """Level histogram from a shuffled bag of level indices (identity randomizer)."""
    if not isinstance(levels, np.ndarray):
        levels = np.asarray(levels) if _is_int_seq(levels) else as_arrays(levels)[1]
    if levels.size == 0:
        raise ValueError("no user records")
    rng = rng if rng is not None else np.random.default_rng()
    bag = rng.permutation(levels)
    k = int(num_levels if num_levels is not None else bag.max())
    return tuple(float(c) for c in np.bincount(bag - 1, minlength=k)[:k])


def _is_int_seq(x) -> bool:
    try:
        return all(isinstance(v, (int, np.integer)) for v in x)
    except TypeError:
        return False


def shuffle_and_count(bags: Iterable, d: int,
                      rng: Optional[np.random.Generator] = None) -> MessageMultiset:
    """Shuffle the union of message bags and tally per-item counts."""
    parts = [np.asarray(list(b) if not isinstance(b, np.ndarray) else b, dtype=np.int64)
             for b in bags]
    union = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    rng = rng if rng is not None else np.random.default_rng()
    shuffled = rng.permutation(union)
    return MessageMultiset(np.bincount(shuffled - 1, minlength=d)[:d].astype(np.int64))


def estimate(msgs: MessageMultiset, histogram: Sequence[float], params: ProtocolParams,
             config: SegmentedConfig) -> EstimateResult:
    """Debiased frequencies ``(C_j - n*m/d) / sum(n_k * lambda_k)``; no clipping."""
    denom = math.fsum(h * r for h, r in zip(histogram, params.poisson_rates))
    if denom <= 0:
        raise UndefinedEstimatorError("sum of n_k * lambda_k is zero")
    expected = config.population * params.blanket_rate / config.domain_size
    counts = np.asarray(msgs.counts, dtype=np.int64)
    return EstimateResult(estimates=(counts - expected) / denom, raw_counts=counts,
                          denominator=denom, blanket_expectation=expected)


def run_protocol(records, config: SegmentedConfig, params: ProtocolParams,
                 seed: int) -> EstimateResult:
    """Level aggregation, randomization, shuffling and estimation for one run."""
    items, levels = as_arrays(records)
    if items.shape[0] != config.population:
        raise ValueError(f"config population {config.population} != {items.shape[0]} records")
    if len(params.poisson_rates) != config.num_levels:
        raise ValueError("one Poisson rate per level is required")
    histogram = aggregate_levels(levels, config.num_levels, _aux_rng(seed, 1))
    messages = randomize_all(items, levels, params, config.domain_size, seed)
    msgs = shuffle_and_count([messages], config.domain_size, _aux_rng(seed, 2))
    return estimate(msgs, histogram, params, config)


@dataclass(frozen=True)
class WorstCasePair:
    """Neighbouring datasets for the lower-bound witness.

    The victim holds ``{first}`` in ``original`` and ``{second}`` in
    ``neighbour``.  ``offsets`` are the contributions of other users to the
    two witness items; they are non-zero only when ``d == 2`` and then require
    the other users to report deterministically.
    """

    original: list[UserRecord]
    neighbour: list[UserRecord]
    victim: int
    first: int
    second: int
    offsets: tuple[int, int]

    def project(self, counts: np.ndarray) -> tuple[int, int]:
        """``(C_first, C_second)`` net of other users' fixed contributions."""
        return (int(counts[self.first - 1]) - self.offsets[0],
                int(counts[self.second - 1]) - self.offsets[1])


def build_worstcase_pair(d: int, n: int, config: SegmentedConfig, victim: int = 0,
                         params: Optional[ProtocolParams] = None) -> WorstCasePair:
    """Datasets where no other user touches the victim's two candidate items.

    With ``d == 2`` the other users must hold a witness item; pass ``params``
    so their reports can be checked to be deterministic (rate 1).
    """
    if d < 2:
        raise UnsupportedWitnessError("witness needs at least two items")
    if config.set_size != 1:
        raise UnsupportedWitnessError("witness is defined for single-item users")
    if not 0 <= victim < n:
        raise ValueError("victim index out of range")
    first, second = 1, 2
    others = [j for j in range(3, d + 1)]
    records = []
    level_of = _level_assignment(config, n)
    offsets = [0, 0]
    for i in range(n):
        if i == victim:
            continue
        if others:
            item = others[i % len(others)]
        else:
            item = first if i % 2 == 0 else second
            offsets[item - 1] += 1
        records.append((i, item))
    if offsets != [0, 0]:
        if params is None or any(
                params.poisson_rates[level_of[i] - 1] < 1.0 for i, _ in records):
            raise UnsupportedWitnessError(
                "with d == 2 the other users must report at rate 1")
    original, neighbour = [], []
    lookup = dict(records)
    for i in range(n):
        if i == victim:
            original.append(UserRecord((first,), level_of[i]))
            neighbour.append(UserRecord((second,), level_of[i]))
        else:
            rec = UserRecord((lookup[i],), level_of[i])
            original.append(rec)
            neighbour.append(rec)
    return WorstCasePair(original, neighbour, victim, first, second, tuple(offsets))


def _level_assignment(config: SegmentedConfig, n: int) -> list[int]:
    # fill levels in order of the config's counts, first level absorbing rounding
    counts = [int(round(c)) for c in config.level_counts]
    levels = [k + 1 for k, c in enumerate(counts) for _ in range(c)]
    levels = (levels + [1] * n)[:n]
    return levels
