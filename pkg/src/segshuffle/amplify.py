"""Numerical privacy-amplification accountant for shuffled Poisson reports.

The accountant bounds the shuffled output of one user's randomizer by a
pair of two-dimensional count distributions ``P`` and ``Q``::

    C  ~ Binom(B, rho)            blanket messages landing on the two witness items
    A  ~ Binom(C, 1/2)            split of those blankets between the two items
    D1 ~ Bernoulli(beta*p/(p-1))  victim's report lands on the first item
    D2 ~ Bernoulli(beta/(p-1-beta*p)) if D1 == 0 else 0

    P = (A + D1, C - A + D2)      Q = (A + D2, C - A + D1)

with ``rho = gamma * 2*beta*p / ((p-1)*q)``.  ``p = inf`` is supported
exactly (``D1 ~ Bernoulli(beta)``, ``D2 = 0``, ``rho = 2*beta*gamma/q``).

The Hockey-stick divergence ``sum(max(0, P - e^eps Q))`` is evaluated on a
truncated support; the probability mass dropped by truncation is computed
from exact binomial tails and added back, so every reported delta is an
upper bound.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import special, stats

TAU = 1e-12

_LOG2 = math.log(2.0)


class ParameterDomainError(ValueError):
    """Raised when accountant parameters fall outside their valid domain."""


@dataclass(frozen=True)
class AmplifyParams:
    """Index of the count-pair distribution family.

    Attributes:
      p: variation ratio, ``> 1`` or ``math.inf``.
      beta: total-variation parameter in ``[0, 1]``.
      q: ratio parameter, ``> 0`` (may be 0 only when ``beta == 0``).
      blanket_trials: number ``B`` of Bernoulli blanket trials.
      gamma: per-trial blanket emission probability in ``(0, 1]``.
    """

    p: float
    beta: float
    q: float
    blanket_trials: int
    gamma: float = 1.0

    def __post_init__(self):
        if not self.p > 1:
            raise ParameterDomainError(f"p must be > 1, got {self.p}")
        if not 0.0 <= self.beta <= 1.0:
            raise ParameterDomainError(f"beta must lie in [0, 1], got {self.beta}")
        if math.isfinite(self.p) and self.beta > (self.p - 1) / (self.p + 1) + 1e-12:
            raise ParameterDomainError(
                f"beta={self.beta} exceeds (p-1)/(p+1) for p={self.p}")
        if self.q < 0 or (self.q == 0 and self.beta > 0):
            raise ParameterDomainError(f"q must be > 0, got {self.q}")
        if int(self.blanket_trials) != self.blanket_trials or self.blanket_trials < 0:
            raise ParameterDomainError(
                f"blanket_trials must be a non-negative integer, got {self.blanket_trials}")
        if not 0.0 < self.gamma <= 1.0:
            raise ParameterDomainError(f"gamma must lie in (0, 1], got {self.gamma}")
        rho = self._unclamped_rho()
        # with no blanket trials the rate never enters the distribution
        if self.blanket_trials > 0 and not 0.0 <= rho <= 1.0 + 1e-12:
            raise ParameterDomainError(f"effective blanket rate {rho} is outside [0, 1]")

    def _unclamped_rho(self) -> float:
        if self.beta == 0:
            return 0.0
        if math.isinf(self.p):
            return 2.0 * self.beta * self.gamma / self.q
        return self.gamma * 2.0 * self.beta * self.p / ((self.p - 1.0) * self.q)

    @property
    def rho(self) -> float:
        """Per-trial probability that a blanket lands on one of the two witness items."""
        return min(self._unclamped_rho(), 1.0)

    @property
    def first_rate(self) -> float:
        """``Pr[D1 = 1]``."""
        if math.isinf(self.p):
            return self.beta
        return self.beta * self.p / (self.p - 1.0)

    @property
    def second_rate(self) -> float:
        """Unconditional ``Pr[D2 = 1]``; equals ``beta / (p - 1)``."""
        if math.isinf(self.p):
            return 0.0
        return self.beta / (self.p - 1.0)

    def weights(self) -> tuple[float, float, float]:
        """Probabilities of ``(D1, D2)`` being ``(0,0)``, ``(1,0)``, ``(0,1)``."""
        w10 = self.first_rate
        w01 = self.second_rate
        return max(0.0, 1.0 - w10 - w01), w10, w01


@dataclass(frozen=True)
class CountPair:
    left: int
    right: int


@dataclass(frozen=True)
class PrivacyCheckRequest:
    level_epsilon: float
    delta: float
    set_size: int
    params: AmplifyParams

    def __post_init__(self):
        if self.level_epsilon < 0:
            raise ParameterDomainError("level_epsilon must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ParameterDomainError("delta must lie in (0, 1)")
        if self.set_size < 1:
            raise ParameterDomainError("set_size must be >= 1")


@dataclass(frozen=True)
class PrivacyCheck:
    holds: bool
    achieved_delta: float
    threshold: float


def poisson_instance(rate: float, domain_size: int, blanket_rate: float,
                     population: int) -> AmplifyParams:
    """Accountant parameters for the Poisson randomizer with uniform blankets.

    Uses ``p = inf``, ``beta = rate``, ``q = d * rate`` and ``B = n * ceil(m)``
    trials at ``gamma = m / ceil(m)``; ``m = 0`` maps to ``B = 0, gamma = 1``.
    """
    if blanket_rate < 0:
        raise ParameterDomainError("blanket rate must be non-negative")
    slots = math.ceil(blanket_rate)
    if slots == 0:
        trials, gamma = 0, 1.0
    else:
        trials, gamma = population * slots, blanket_rate / slots
    return AmplifyParams(p=math.inf, beta=rate, q=domain_size * rate,
                         blanket_trials=trials, gamma=gamma)


def _log_base(c: int, a: int, trials: int, rho: float) -> float:
    if c < 0 or c > trials or a < 0 or a > c:
        return -math.inf
    return float(stats.binom.logpmf(c, trials, rho)) + (
        special.gammaln(c + 1) - special.gammaln(a + 1)
        - special.gammaln(c - a + 1) - c * _LOG2)


def count_pair_pmf(params: AmplifyParams, point: CountPair,
                   which: Literal["P", "Q"] = "P") -> float:
    """Probability of ``point`` under ``P`` or ``Q``."""
    if which not in ("P", "Q"):
        raise ValueError(f"which must be 'P' or 'Q', got {which!r}")
    u, v = point.left, point.right
    if which == "Q":
        u, v = v, u
    trials, rho = params.blanket_trials, params.rho
    w00, w10, w01 = params.weights()
    terms = []
    # P(u, v) = w00 f(u, v) + w10 f(u-1, v) + w01 f(u, v-1)
    for w, du, dv in ((w00, 0, 0), (w10, 1, 0), (w01, 0, 1)):
        if w <= 0:
            continue
        terms.append(math.log(w) + _log_base(u - du + v - dv, u - du, trials, rho))
    if not terms:
        return 0.0
    return float(np.exp(special.logsumexp(terms)))


@dataclass(frozen=True)
class _Grid:
    """Masked component arrays on a ``(total, left)`` lattice.

    ``base`` holds ``f(t, u)``, ``left_shift`` holds ``f(t-1, u-1)`` and
    ``right_shift`` holds ``f(t-1, u)``, each restricted to the kept window.
    """

    base: np.ndarray
    left_shift: np.ndarray
    right_shift: np.ndarray
    dropped_mass: float


def _hoeffding_halfwidth(c: np.ndarray, tail: float) -> np.ndarray:
    return np.sqrt(np.asarray(c, dtype=float) * math.log(2.0 / tail) / 2.0)


@functools.lru_cache(maxsize=4)
def _component_grid(trials: int, rho: float, tau: float) -> _Grid:
    if trials == 0 or rho == 0.0:
        clo = chi = 0
    elif rho >= 1.0:
        clo = chi = trials
    else:
        clo = max(0, int(stats.binom.ppf(tau / 4, trials, rho)))
        chi = min(trials, int(stats.binom.isf(tau / 4, trials, rho)))
        while chi < trials and stats.binom.sf(chi, trials, rho) > tau / 4:
            chi += 1
        while clo > 0 and stats.binom.cdf(clo - 1, trials, rho) > tau / 4:
            clo -= 1

    cs = np.arange(clo, chi + 1)
    log_c = stats.binom.logpmf(cs, trials, rho)
    half = _hoeffding_halfwidth(cs, tau / 4)
    alo = np.maximum(0, np.ceil(cs / 2.0 - half)).astype(np.int64)
    ahi = np.minimum(cs, np.floor(cs / 2.0 + half)).astype(np.int64)

    # Exact dropped mass: tails of C plus tails of A inside the kept C-range.
    dropped_c = 0.0
    if clo > 0:
        dropped_c += float(stats.binom.cdf(clo - 1, trials, rho))
    if chi < trials:
        dropped_c += float(stats.binom.sf(chi, trials, rho))
    a_tail = (stats.binom.cdf(alo - 1, cs, 0.5) + stats.binom.sf(ahi, cs, 0.5))
    dropped_a = math.fsum(np.exp(log_c) * a_tail)
    dropped = min(1.0, dropped_c + dropped_a)

    width = int(math.ceil(float(half.max()) if half.size else 0.0)) + 1
    ts = np.arange(clo, chi + 2)[:, None]
    us = ts // 2 - width + np.arange(2 * width + 4)[None, :]

    def masked(c, a):
        c, a = np.broadcast_arrays(c, a)
        idx = c - clo
        ok = (idx >= 0) & (idx < cs.size)
        safe = np.clip(idx, 0, cs.size - 1)
        ok &= (a >= alo[safe]) & (a <= ahi[safe])
        c_ok = np.where(ok, c, 0)
        a_ok = np.where(ok, a, 0)
        logv = (log_c[safe] + special.gammaln(c_ok + 1) - special.gammaln(a_ok + 1)
                - special.gammaln(c_ok - a_ok + 1) - c_ok * _LOG2)
        return np.where(ok, np.exp(logv), 0.0)

    return _Grid(base=masked(ts, us), left_shift=masked(ts - 1, us - 1),
                 right_shift=masked(ts - 1, us), dropped_mass=dropped)


def _stable_sum(arr: np.ndarray) -> float:
    # pairwise summation per row, compensated summation across rows
    if arr.ndim == 1:
        return math.fsum(arr)
    return math.fsum(arr.sum(axis=1))


def hockey_stick(params: AmplifyParams, epsilon: float, tau: float = TAU,
                 reverse: bool = False) -> float:
    """Upper bound on ``D_{e^epsilon}(P || Q)`` (or ``Q || P`` with ``reverse``).

    The result exceeds the exact divergence by at most the truncated
    probability mass, which is below ``tau``.
    """
    if epsilon < 0:
        raise ParameterDomainError("epsilon must be non-negative")
    if params.beta == 0:
        return 0.0
    grid = _component_grid(int(params.blanket_trials), float(params.rho), float(tau))
    w00, w10, w01 = params.weights()
    if reverse:
        w10, w01 = w01, w10
    scale = math.exp(epsilon)
    diff = (w00 * (1.0 - scale)) * grid.base
    diff += (w10 - scale * w01) * grid.left_shift
    diff += (w01 - scale * w10) * grid.right_shift
    np.maximum(diff, 0.0, out=diff)
    return min(1.0, _stable_sum(diff) + grid.dropped_mass)


def check_privacy(req: PrivacyCheckRequest) -> PrivacyCheck:
    """Test whether one user at level ``E_k`` holding ``s`` items is ``(E_k, delta)``-DP.

    Each item is treated as a virtual single-item user at
    ``(E_k/s, delta / (s * e^{E_k}))``; group composition over ``s`` items
    then yields the user-level guarantee.
    """
    s = req.set_size
    threshold = req.delta / (s * math.exp(req.level_epsilon))
    achieved = hockey_stick(req.params, req.level_epsilon / s)
    return PrivacyCheck(holds=achieved <= threshold, achieved_delta=achieved,
                        threshold=threshold)


def asymptotic_epsilon(params: AmplifyParams, delta: float) -> float:
    """Large-population heuristic for the amplified epsilon (constant taken as 1).

    Only meant to seed search ranges; it is not a privacy guarantee.
    """
    if params.blanket_trials < 1:
        raise ParameterDomainError("asymptotic_epsilon needs at least one blanket trial")
    if not 0.0 < delta < 1.0:
        raise ParameterDomainError("delta must lie in (0, 1)")
    ratio = 1.0 if math.isinf(params.p) else (params.p - 1.0) / params.p
    return math.sqrt(params.beta * ratio * params.q * math.log(1.0 / delta)
                     / (params.blanket_trials * params.gamma))
