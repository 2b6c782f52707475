import math

import numpy as np
import pytest

from segshuffle import amplify
from segshuffle.optimize import (
    RATE_TOL, InfeasibleLevelError, ProtocolParams, SegmentedConfig,
    UndefinedObjectiveError, blanket_grid, level_check, max_feasible_rate, min_blanket_rate,
    mse_bound, optimize_parameters, params_at)

from oracles import monte_carlo_divergence


def msnbc_config(n=5000, levels=(0.5, 1.0, 2.0), fractions=(0.25, 0.5, 0.25)):
    return SegmentedConfig(levels=levels, level_counts=tuple(f * n for f in fractions),
                           delta=0.01 / n, domain_size=17, set_size=4, population=n)


def test_mse_bound_examples():
    one = SegmentedConfig((1.0,), (100,), 1e-3, 10, 1, 100)
    assert mse_bound(one, 1.0, [0.5]) == pytest.approx(0.06, rel=1e-14)
    assert mse_bound(one, 0.0, [1.0]) == pytest.approx(1 / 100, rel=1e-14)


def test_mse_bound_decreasing_in_rates():
    cfg = msnbc_config()
    rates = np.array([0.2, 0.3, 0.4])
    assert mse_bound(cfg, 2.0, 2 * rates) < mse_bound(cfg, 2.0, rates)
    for k in range(3):
        bumped = rates.copy()
        bumped[k] += 0.1
        assert mse_bound(cfg, 2.0, bumped) < mse_bound(cfg, 2.0, rates)


def test_mse_bound_zero_rates():
    with pytest.raises(UndefinedObjectiveError):
        mse_bound(msnbc_config(), 1.0, [0, 0, 0])


def test_config_validation():
    with pytest.raises(ValueError):
        SegmentedConfig((1.0, 0.5), (1, 1), 0.1, 4, 1, 2)
    with pytest.raises(ValueError):
        SegmentedConfig((1.0,), (1, 1), 0.1, 4, 1, 2)
    with pytest.raises(ValueError):
        SegmentedConfig((1.0,), (2,), 1.5, 4, 1, 2)


def test_protocol_params_validation():
    with pytest.raises(ValueError):
        ProtocolParams(1.0, (1.2,))
    with pytest.raises(ValueError):
        ProtocolParams(-1.0, (0.5,))


def test_max_rate_is_one_when_full_rate_passes():
    cfg = msnbc_config(levels=(2.0,), fractions=(1.0,))
    assert level_check(cfg, 1, 2.0, 1.0).holds
    assert max_feasible_rate(cfg, 1, 2.0) == (1.0, True)


def test_max_rate_monotone_in_budget():
    cfg = msnbc_config()
    rates = [max_feasible_rate(cfg, k, 1.0).rate for k in (1, 2, 3)]
    assert rates[0] <= rates[1] <= rates[2]
    ladder = SegmentedConfig(tuple(np.linspace(0.2, 3.0, 8)), (1,) * 8, 2e-6, 17, 4, 5000)
    grid = [max_feasible_rate(ladder, k, 0.8).rate for k in range(1, 9)]
    assert all(b >= a for a, b in zip(grid, grid[1:]))


@pytest.mark.parametrize("m", [0.0, 0.3, 2.0])
def test_bisection_endpoints(m):
    cfg = msnbc_config()
    for k in (1, 2, 3):
        found = max_feasible_rate(cfg, k, m)
        assert found.feasible
        assert level_check(cfg, k, m, found.rate).holds
        if found.rate < 1.0:
            assert not level_check(cfg, k, m, min(1.0, found.rate + 2 * RATE_TOL)).holds


def test_no_blankets_rate_equals_threshold():
    # with m = 0 the divergence equals the rate itself
    cfg = SegmentedConfig((1.0,), (10,), 0.01, 5, 1, 10)
    found = max_feasible_rate(cfg, 1, 0.0)
    assert found.rate == pytest.approx(0.01 / math.e, abs=2 * RATE_TOL)


def test_pinned_msnbc_scale_rates():
    cfg = SegmentedConfig((0.5, 1.0), (2500, 2500), 0.01 / 5000, 17, 4, 5000)
    assert max_feasible_rate(cfg, 2, 2.0).rate == 1.0
    assert max_feasible_rate(cfg, 1, 2.0).rate == pytest.approx(0.542944055001005, abs=1e-11)


def test_msnbc_scale_accountant_against_monte_carlo():
    # same B and rho as the pinned case, at a point where the divergence is measurable
    params = amplify.poisson_instance(1.0, 17, 2.0, 5000)
    exact = amplify.hockey_stick(params, 0.05)
    mc, se = monte_carlo_divergence(1.0, 17.0, params.blanket_trials, params.gamma, 0.05,
                                    samples=400_000, seed=3)
    assert abs(mc - exact) <= 4 * se


def test_min_blanket_rate_ordering_and_scaling():
    cfg = msnbc_config()
    m = [min_blanket_rate(cfg, k) for k in (1, 2, 3)]
    assert m[2] <= m[1] <= m[0]
    for k, mk in enumerate(m, start=1):
        assert level_check(cfg, k, mk, 1.0).holds
        assert not level_check(cfg, k, mk * (1 - 2e-3), 1.0).holds
    big = msnbc_config(n=50000)
    assert min_blanket_rate(big, 1) < m[0]


def test_min_blanket_rate_shrinks_with_budget():
    cfg = msnbc_config(levels=(1.0, 2.0, 3.0))
    m = [min_blanket_rate(cfg, k) for k in (1, 2, 3)]
    assert m[0] > m[1] > m[2]


def test_min_blanket_rate_infeasible():
    cfg = SegmentedConfig((0.001,), (100,), 1e-9, 17, 4, 100)
    with pytest.raises(InfeasibleLevelError) as err:
        min_blanket_rate(cfg, 1, cap=4.0)
    assert err.value.level_index == 1


def test_override_fixes_blanket_rate():
    cfg = msnbc_config()
    params = optimize_parameters(cfg, m_override=1.0)
    assert params.blanket_rate == 1.0
    assert params.poisson_rates == tuple(max_feasible_rate(cfg, k, 1.0).rate for k in (1, 2, 3))
    assert params.mse_bound == pytest.approx(mse_bound(cfg, 1.0, params.poisson_rates))


def test_single_level_picks_minimal_blankets():
    cfg = SegmentedConfig((1.0,), (500,), 0.01 / 500, 17, 2, 500)
    params = optimize_parameters(cfg, grid_points=8)
    assert params.poisson_rates == (1.0,)
    assert params.blanket_rate == pytest.approx(min_blanket_rate(cfg, 1))
    # exhaustive comparison: no blanket rate on a fine grid does better
    for m in np.geomspace(0.05, 10, 25):
        assert params_at(cfg, float(m)).mse_bound >= params.mse_bound * (1 - 1e-9)


def test_optimizer_returns_argmin_of_grid_and_is_private():
    cfg = msnbc_config()
    params = optimize_parameters(cfg, grid_points=8)
    grid = blanket_grid(cfg, 8)
    scores = [params_at(cfg, float(m)).mse_bound for m in grid]
    assert params.mse_bound == pytest.approx(min(scores), rel=1e-12)
    assert params.search_range == (grid[0], grid[-1])
    for k, rate in enumerate(params.poisson_rates, start=1):
        assert level_check(cfg, k, params.blanket_rate, rate).holds
    assert list(params.poisson_rates) == sorted(params.poisson_rates)


def test_optimal_blanket_rate_matches_reported_ranges():
    assert 1.0 <= optimize_parameters(msnbc_config(5000)).blanket_rate <= 4.0
    assert 0.1 <= optimize_parameters(msnbc_config(50000)).blanket_rate <= 1.0
