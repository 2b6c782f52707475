import numpy as np
import pytest

from segshuffle.data import (
    MSNBC_DOMAIN, SEGMENTATIONS, Dataset, InsufficientUsersError, MalformedLineError,
    assign_levels, fix_set_size, level_quotas, load_msnbc, load_or_simulate_msnbc,
    synth_uniform, write_msnbc_like)


def write(tmp_path, text):
    path = tmp_path / "sessions.seq"
    path.write_text(text)
    return path


def test_fix_set_size_pads_from_complement():
    got = fix_set_size([1, 2, 3, 2, 1], 4, 17, np.random.default_rng(0))
    assert len(got) == 4
    assert {1, 2, 3} <= set(got.tolist())
    assert len(set(got.tolist())) == 4


def test_fix_set_size_subsamples():
    got = fix_set_size(list(range(1, 11)), 3, 17, np.random.default_rng(1))
    assert len(set(got.tolist())) == 3 and set(got.tolist()) <= set(range(1, 11))
    assert fix_set_size([5, 2, 5], 2, 17, np.random.default_rng(0)).tolist() == [2, 5]


def test_load_msnbc_with_headers(tmp_path):
    path = write(tmp_path, "% comment\n\nfrontpage news\n\n1 2 3 2 1 \n4 4\n17\n")
    data = load_msnbc(path, 2, 3, seed=0)
    assert data.items.shape == (3, 2)
    assert data.domain_size == MSNBC_DOMAIN
    assert np.all(np.diff(data.items, axis=1) > 0)


def test_load_msnbc_errors(tmp_path):
    with pytest.raises(MalformedLineError):
        load_msnbc(write(tmp_path, "1 2 18\n"), 2, 1, 0)
    with pytest.raises(MalformedLineError):
        load_msnbc(write(tmp_path, "1 2 x\n"), 2, 1, 0)
    with pytest.raises(InsufficientUsersError):
        load_msnbc(write(tmp_path, "1 2\n3\n"), 2, 5, 0)
    with pytest.raises(FileNotFoundError):
        load_msnbc(tmp_path / "missing.seq", 2, 1, 0)


def test_true_w_sums_to_set_size():
    data = synth_uniform(20, 5, 300, seed=0)
    assert data.true_w.sum() == pytest.approx(5.0)
    assert synth_uniform(6, 6, 10, seed=1).true_w.tolist() == [1.0] * 6


def test_synth_uniform_frequencies():
    d, s, n = 16, 3, 20000
    w = synth_uniform(d, s, n, seed=7).true_w
    p = s / d
    assert np.all(np.abs(w - p) < 5 * np.sqrt(p * (1 - p) / n))


def test_synth_uniform_rejects_large_sets():
    with pytest.raises(ValueError):
        synth_uniform(3, 4, 10, 0)


def test_level_quotas():
    assert level_quotas(5000, SEGMENTATIONS["S1"]) == (1250, 2500, 1250)
    assert level_quotas(5000, SEGMENTATIONS["S2"]) == (2500, 1250, 1250)
    assert sum(level_quotas(7, (0.25, 0.5, 0.25))) == 7
    assert level_quotas(10, (1 / 3, 1 / 3, 1 / 3)) == (4, 3, 3)
    with pytest.raises(ValueError):
        level_quotas(10, (0.5, 0.6))


def test_assign_levels_exact_and_deterministic():
    base = synth_uniform(10, 2, 1000, seed=0)
    a = assign_levels(base, SEGMENTATIONS["S3"], 5)
    b = assign_levels(base, SEGMENTATIONS["S3"], 5)
    assert a.level_counts(3) == (250, 250, 500)
    assert np.array_equal(a.levels, b.levels)
    assert np.array_equal(a.items, base.items)


def test_subset_and_records():
    data = Dataset(items=[[1, 2], [2, 3]], domain_size=3, levels=[1, 2])
    assert data.records[1].items == (2, 3) and data.records[1].level_index == 2
    sub = data.subset(np.array([False, True]))
    assert len(sub) == 1 and sub.levels.tolist() == [2]


def test_surrogate_generator_shape(tmp_path):
    path = tmp_path / "like.seq"
    write_msnbc_like(path, 3000, seed=0)
    lines = [l for l in path.read_text().splitlines() if l.strip() and l[0].isdigit()]
    assert len(lines) == 3000
    distinct = np.mean([len(set(l.split())) for l in lines])
    assert 1.5 < distinct < 3.0


def test_load_or_simulate_is_deterministic(tmp_path):
    a = load_or_simulate_msnbc(None, 4, 500, 1, cache_dir=str(tmp_path))
    b = load_or_simulate_msnbc(None, 4, 500, 1, cache_dir=str(tmp_path))
    assert np.array_equal(a.items, b.items)
    assert a.metadata["dataset"] == "msnbc-like"
    assert a.items.shape == (500, 4)
