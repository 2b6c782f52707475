"""Set-valued datasets: MSNBC session files, synthetic uniform sets, level quotas."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from segshuffle.protocol import UserRecord

MSNBC_DOMAIN = 17

SEGMENTATIONS = {
    "S1": (0.25, 0.50, 0.25),
    "S2": (0.50, 0.25, 0.25),
    "S3": (0.25, 0.25, 0.50),
}


class MalformedLineError(ValueError):
    pass


class InsufficientUsersError(ValueError):
    pass


@dataclass
class Dataset:
    """Users' item sets as an ``(n, s)`` array of 1-based items plus level indices."""

    items: np.ndarray
    domain_size: int
    levels: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        if self.items.ndim != 2:
            raise ValueError("items must be a 2-D array")
        if self.levels is None:
            self.levels = np.ones(self.items.shape[0], dtype=np.int64)
        self.levels = np.asarray(self.levels, dtype=np.int64)

    def __len__(self) -> int:
        return self.items.shape[0]

    @property
    def set_size(self) -> int:
        return self.items.shape[1]

    @property
    def records(self) -> list[UserRecord]:
        return [UserRecord(tuple(int(t) for t in row), int(k))
                for row, k in zip(self.items, self.levels)]

    @property
    def true_w(self) -> np.ndarray:
        """Fraction of users holding each item."""
        counts = np.bincount(self.items.ravel() - 1, minlength=self.domain_size)
        return counts / len(self)

    def level_counts(self, num_levels: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self.levels - 1, minlength=num_levels))

    def subset(self, mask: np.ndarray) -> "Dataset":
        return replace(self, items=self.items[mask], levels=self.levels[mask],
                       metadata=dict(self.metadata))


def _parse_msnbc(path) -> list[list[int]]:
    sessions = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("%"):
                continue
            try:
                values = [int(t) for t in tokens]
            except ValueError:
                if not tokens[0].lstrip("-").isdigit():
                    continue  # header such as the category-name line
                raise MalformedLineError(f"{path}:{lineno}: non-integer item") from None
            bad = [v for v in values if not 1 <= v <= MSNBC_DOMAIN]
            if bad:
                raise MalformedLineError(f"{path}:{lineno}: item {bad[0]} outside [1, 17]")
            sessions.append(values)
    return sessions


def fix_set_size(items: Sequence[int], s: int, d: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Deduplicate, then subsample down to or pad up to exactly ``s`` items.

    Padding draws distinct items uniformly from the complement of the set.
    """
    unique = np.unique(np.asarray(items, dtype=np.int64))
    if unique.size > s:
        return np.sort(rng.choice(unique, size=s, replace=False))
    if unique.size < s:
        complement = np.setdiff1d(np.arange(1, d + 1), unique)
        extra = rng.choice(complement, size=s - unique.size, replace=False)
        return np.sort(np.concatenate([unique, extra]))
    return unique


def load_msnbc(path, s: int, n_target: int, seed: int) -> Dataset:
    """Sample ``n_target`` MSNBC sessions and fix each to ``s`` distinct categories."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if not 1 <= s <= MSNBC_DOMAIN:
        raise ValueError(f"set size must lie in [1, {MSNBC_DOMAIN}]")
    sessions = _parse_msnbc(path)
    if len(sessions) < n_target:
        raise InsufficientUsersError(
            f"{path} has {len(sessions)} sessions, {n_target} requested")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(sessions), size=n_target, replace=False)
    items = np.stack([fix_set_size(sessions[i], s, MSNBC_DOMAIN, rng) for i in chosen])
    return Dataset(items=items, domain_size=MSNBC_DOMAIN,
                   metadata={"dataset": "msnbc", "source": str(path),
                             "padding": "uniform-from-complement"})


def synth_uniform(d: int, s: int, n: int, seed: int) -> Dataset:
    """``n`` users each holding ``s`` distinct items drawn uniformly from ``[1, d]``."""
    if s > d:
        raise ValueError(f"set size {s} exceeds domain size {d}")
    rng = np.random.default_rng(seed)
    keys = rng.random((n, d))
    items = np.sort(np.argpartition(keys, s - 1, axis=1)[:, :s] + 1, axis=1)
    return Dataset(items=items, domain_size=d, metadata={"dataset": "synthetic"})


def level_quotas(n: int, fractions: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder rounding of ``n * fractions``."""
    fractions = np.asarray(fractions, dtype=float)
    if fractions.size == 0 or np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"level fractions must be non-negative and sum to 1, got {fractions}")
    exact = n * fractions
    quotas = np.floor(exact).astype(np.int64)
    short = n - int(quotas.sum())
    order = np.argsort(-(exact - quotas), kind="stable")
    quotas[order[:short]] += 1
    return tuple(int(q) for q in quotas)


def assign_levels(dataset: Dataset, fractions: Sequence[float], seed: int) -> Dataset:
    """Give users level indices in exact quotas, randomly permuted across users."""
    quotas = level_quotas(len(dataset), fractions)
    levels = np.repeat(np.arange(1, len(quotas) + 1), quotas)
    levels = np.random.default_rng(seed).permutation(levels)
    meta = dict(dataset.metadata, segmentation=tuple(float(f) for f in fractions))
    return replace(dataset, levels=levels, metadata=meta)


# Category popularity for the MSNBC-like generator (frontpage first).
_SURROGATE_POPULARITY = np.array([
    0.20, 0.09, 0.05, 0.07, 0.04, 0.09, 0.05, 0.06, 0.03,
    0.03, 0.04, 0.08, 0.05, 0.02, 0.02, 0.05, 0.03])


def write_msnbc_like(path, n_users: int, seed: int,
                     mean_views: float = 4.7, stay: float = 0.6) -> None:
    """Write an MSNBC-format file of synthetic page-category sessions.

    Sessions are Markov walks over the 17 categories: each view repeats the
    previous category with probability ``stay``, otherwise draws a category by
    popularity.  Defaults give roughly two distinct categories per session.
    """
    rng = np.random.default_rng(seed)
    popularity = _SURROGATE_POPULARITY / _SURROGATE_POPULARITY.sum()
    lengths = rng.geometric(1.0 / mean_views, size=n_users)
    with open(path, "w") as fh:
        fh.write("% Different categories found in input file:\n\n")
        fh.write("frontpage news tech local opinion on-air misc weather msn-news "
                 "health living business msn-sports sports summary bbs travel\n\n")
        fh.write("% Sequences:\n\n")
        for length in lengths:
            cats = rng.choice(MSNBC_DOMAIN, size=length, p=popularity) + 1
            keep = rng.random(length) < stay
            keep[0] = False
            seq = cats.copy()
            for i in range(1, length):
                if keep[i]:
                    seq[i] = seq[i - 1]
            fh.write(" ".join(str(v) for v in seq) + " \n")


def load_or_simulate_msnbc(path: Optional[str], s: int, n_target: int, seed: int,
                           cache_dir: str = ".") -> Dataset:
    """Load a real MSNBC file, or fall back to a generated MSNBC-like file."""
    if path:
        return load_msnbc(path, s, n_target, seed)
    generated = os.path.join(cache_dir, f"msnbc_like_{n_target}_{seed}.seq")
    if not os.path.exists(generated):
        write_msnbc_like(generated, n_users=max(2 * n_target, 1000), seed=seed)
    data = load_msnbc(generated, s, n_target, seed)
    data.metadata["dataset"] = "msnbc-like"
    return data
