"""Error-vs-blanket-rate experiments for the segmented protocol and its baselines.

CSV layout (one header line, then rows in ``(method, m, trial)`` order):

    method, dataset, d, s, n, segmentation, m, trial, seed, mse, runtime_ms,
    lambdas, privacy_ok

``trial`` is an integer for per-run rows and ``mean`` for the aggregate row
appended after each ``(method, m)`` block.  ``lambdas`` lists the Poisson
rates used (``;``-separated; for SepMM variants one rate per segment), and
``privacy_ok`` is the post-hoc accountant audit of those rates.
"""

from __future__ import annotations

import csv
import concurrent.futures
import functools
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from segshuffle import baselines, data, optimize
from segshuffle.optimize import ProtocolParams, SegmentedConfig
from segshuffle.protocol import run_protocol

METHODS = ("segmented", "uniform_mm", "sepmm", "weighted_sepmm")

COLUMNS = ("method", "dataset", "d", "s", "n", "segmentation", "m", "trial", "seed",
           "mse", "runtime_ms", "lambdas", "privacy_ok")


@dataclass
class ExperimentSpec:
    dataset: str = "msnbc"
    d: int = 17
    s: int = 4
    n: int = 5000
    levels: tuple[float, ...] = (0.5, 1.0, 2.0)
    segmentation: Union[str, tuple[float, ...]] = "S1"
    delta: Union[str, float] = "0.01/n"
    m_values: Union[str, tuple[float, ...]] = "auto"
    methods: tuple[str, ...] = ("segmented",)
    trials: int = 1
    seed: int = 0
    grid_points: int = 32
    msnbc_path: Optional[str] = None
    cache_dir: str = "."
    workers: int = 1

    def __post_init__(self):
        self.levels = tuple(float(e) for e in self.levels)
        if not isinstance(self.m_values, str):
            self.m_values = tuple(float(m) for m in self.m_values)
        elif self.m_values != "auto":
            raise ValueError(f"m_values must be a list or 'auto', got {self.m_values!r}")
        self.methods = tuple(self.methods)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.dataset not in ("msnbc", "synthetic"):
            raise ValueError(f"dataset must be 'msnbc' or 'synthetic', got {self.dataset!r}")
        if len(self.fractions) != len(self.levels):
            raise ValueError("segmentation needs one fraction per privacy level")
        if self.dataset == "msnbc" and self.d != data.MSNBC_DOMAIN:
            raise ValueError("the MSNBC domain has 17 items")

    @property
    def fractions(self) -> tuple[float, ...]:
        if isinstance(self.segmentation, str):
            try:
                return data.SEGMENTATIONS[self.segmentation]
            except KeyError:
                raise ValueError(f"unknown segmentation {self.segmentation!r}") from None
        return tuple(float(f) for f in self.segmentation)

    @property
    def segmentation_label(self) -> str:
        if isinstance(self.segmentation, str):
            return self.segmentation
        return "/".join(f"{f:g}" for f in self.segmentation)

    def resolved_delta(self) -> float:
        if isinstance(self.delta, str):
            if self.delta.replace(" ", "") != "0.01/n":
                raise ValueError(f"delta must be a number or '0.01/n', got {self.delta!r}")
            return 0.01 / self.n
        return float(self.delta)


@dataclass
class Row:
    method: str
    dataset: str
    d: int
    s: int
    n: int
    segmentation: str
    m: str
    trial: str
    seed: str
    mse: float
    runtime_ms: float
    lambdas: str
    privacy_ok: bool

    def as_list(self) -> list[str]:
        return [self.method, self.dataset, str(self.d), str(self.s), str(self.n),
                self.segmentation, self.m, self.trial, self.seed, repr(float(self.mse)),
                f"{self.runtime_ms:.3f}", self.lambdas, str(self.privacy_ok).lower()]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[Row] = field(default_factory=list)

    def detail(self) -> list[Row]:
        return [r for r in self.rows if r.trial != "mean"]

    def aggregates(self) -> list[Row]:
        return [r for r in self.rows if r.trial == "mean"]

    def mean_mse(self, method: str) -> dict[str, float]:
        return {r.m: r.mse for r in self.aggregates() if r.method == method}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.rows:
            writer.writerow(row.as_list())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def squared_error(estimates: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sum((np.asarray(estimates) - np.asarray(truth)) ** 2))


def build_dataset(spec: ExperimentSpec) -> data.Dataset:
    if spec.dataset == "msnbc":
        base = data.load_or_simulate_msnbc(spec.msnbc_path, spec.s, spec.n, spec.seed,
                                           cache_dir=spec.cache_dir)
    else:
        base = data.synth_uniform(spec.d, spec.s, spec.n, spec.seed)
    return data.assign_levels(base, spec.fractions, spec.seed + 1)


def build_config(spec: ExperimentSpec, dataset: data.Dataset) -> SegmentedConfig:
    return SegmentedConfig(levels=spec.levels,
                           level_counts=dataset.level_counts(len(spec.levels)),
                           delta=spec.resolved_delta(), domain_size=spec.d,
                           set_size=spec.s, population=len(dataset))


def trial_seed(root: int, m_index: int, trial: int) -> int:
    seq = np.random.SeedSequence(root, spawn_key=(m_index, trial))
    return int(seq.generate_state(1)[0])


@functools.lru_cache(maxsize=256)
def _params(config: SegmentedConfig, m: Optional[float], grid_points: int) -> ProtocolParams:
    return optimize.optimize_parameters(config, grid_points=grid_points, m_override=m)


def audit(config: SegmentedConfig, params: ProtocolParams) -> bool:
    """Re-run every level's privacy check at the chosen parameters."""
    return all(optimize.level_check(config, k, params.blanket_rate, rate).holds
               for k, rate in enumerate(params.poisson_rates, start=1))


def _fmt_rates(rates: Sequence[float]) -> str:
    return ";".join(f"{r:.12g}" for r in rates)


def _run_method(method: str, dataset: data.Dataset, config: SegmentedConfig,
                m: Optional[float], seed: int, grid_points: int):
    """One run; returns ``(estimates, rates, privacy_ok)``."""
    if method == "segmented":
        params = _params(config, m, grid_points)
        res = run_protocol(dataset, config, params, seed)
        return res.estimates, params.poisson_rates, audit(config, params)
    if method == "uniform_mm":
        run = baselines.run_uniform_mm(dataset, config, seed, m_override=m,
                                       grid_points=grid_points)
    else:
        run = baselines.run_sepmm(dataset, config, seed,
                                  weighted=(method == "weighted_sepmm"),
                                  m_override=m, grid_points=grid_points)
    ok = True
    rates = []
    for pop, p, level in zip(run.populations, run.params, config.levels):
        single = config.single_level(level, population=pop)
        ok &= audit(single, p)
        rates.extend(p.poisson_rates)
    return run.result.estimates, tuple(rates), ok


def _timed_trial(task):
    method, dataset, config, m, seed, grid_points = task
    start = time.perf_counter()
    estimates, rates, ok = _run_method(method, dataset, config, m, seed, grid_points)
    elapsed = 1000.0 * (time.perf_counter() - start)
    return squared_error(estimates, dataset.true_w), elapsed, rates, ok


def run_experiment(spec: ExperimentSpec, dataset: Optional[data.Dataset] = None,
                   progress=None) -> ExperimentResult:
    """Run every ``method x m x trial`` combination and collect CSV rows.

    With ``spec.workers > 1`` trials run in a process pool; rows are still
    emitted in ``(method, m, trial)`` order and carry the same seeds.
    """
    dataset = dataset if dataset is not None else build_dataset(spec)
    config = build_config(spec, dataset)
    label = dataset.metadata.get("dataset", spec.dataset)
    m_values = [None] if spec.m_values == "auto" else list(spec.m_values)
    result = ExperimentResult(spec)
    common = dict(dataset=label, d=spec.d, s=spec.s, n=spec.n,
                  segmentation=spec.segmentation_label)
    blocks = [(method, mi, m) for method in spec.methods for mi, m in enumerate(m_values)]
    executor = (concurrent.futures.ProcessPoolExecutor(spec.workers)
                if spec.workers > 1 else None)
    try:
        for method, mi, m in blocks:
            seeds = [trial_seed(spec.seed, mi, t) for t in range(spec.trials)]
            tasks = [(method, dataset, config, m, sd, spec.grid_points) for sd in seeds]
            outcomes = (executor.map(_timed_trial, tasks) if executor
                        else map(_timed_trial, tasks))
            m_label = "auto" if m is None else f"{m:g}"
            errors, times = [], []
            all_ok = True
            for trial, (sd, (mse, elapsed, rates, ok)) in enumerate(zip(seeds, outcomes)):
                errors.append(mse)
                times.append(elapsed)
                all_ok &= ok
                result.rows.append(Row(method=method, m=m_label, trial=str(trial),
                                       seed=str(sd), mse=mse, runtime_ms=elapsed,
                                       lambdas=_fmt_rates(rates), privacy_ok=ok, **common))
            result.rows.append(Row(method=method, m=m_label, trial="mean",
                                   seed=str(spec.seed), mse=math.fsum(errors) / len(errors),
                                   runtime_ms=math.fsum(times) / len(times),
                                   lambdas=_fmt_rates(rates), privacy_ok=all_ok, **common))
            if progress is not None:
                progress(method, m_label, result.rows[-1].mse)
    finally:
        if executor is not None:
            executor.shutdown()
    return result


def sweep_minimizer(result: ExperimentResult, method: str) -> tuple[float, float]:
    """``(m, mean MSE)`` of the sweep point with the lowest mean MSE."""
    curve = {float(m): v for m, v in result.mean_mse(method).items() if m != "auto"}
    best = min(curve, key=curve.get)
    return best, curve[best]


def is_u_shaped(ms: Sequence[float], values: Sequence[float]) -> bool:
    """Interior minimum with both ends strictly above it."""
    values = list(values)
    i = int(np.argmin(values))
    return 0 < i < len(values) - 1 and values[0] > values[i] and values[-1] > values[i]
