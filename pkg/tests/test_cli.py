import csv
import math

import pytest

from segshuffle import amplify
from segshuffle.cli import main
from segshuffle.experiment import COLUMNS

from oracles import divergence, enumerate_pair


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_amplify_zero_beta(capsys):
    code, out, _ = run(capsys, "amplify", "--beta", "0", "--q", "1",
                       "--blanket-trials", "3", "--epsilon", "0.1")
    assert code == 0 and float(out) <= 1e-12


def test_amplify_large_epsilon(capsys):
    code, out, _ = run(capsys, "amplify", "--beta", "0.5", "--q", "8.5",
                       "--blanket-trials", "200", "--epsilon", "50")
    assert code == 0 and float(out) <= 1e-12


def test_amplify_full_rate_has_unbounded_ratio(capsys):
    # beta = 1: the point A = C has zero mass under Q, so the divergence at any
    # epsilon is at least (1 - rho/2)^B
    code, out, _ = run(capsys, "amplify", "--beta", "1", "--q", "17",
                       "--blanket-trials", "200", "--epsilon", "50")
    assert code == 0
    assert float(out) == pytest.approx((16 / 17) ** 200, rel=1e-9)


def test_amplify_matches_oracle(capsys):
    code, out, _ = run(capsys, "amplify", "--p", "inf", "--beta", "0.3", "--q", "2",
                       "--blanket-trials", "4", "--gamma", "1", "--epsilon", "0.2")
    P, Q = enumerate_pair(math.inf, 0.3, 2.0, 4, 1.0)
    assert code == 0
    assert float(out) == pytest.approx(divergence(P, Q, 0.2), abs=1e-11)
    assert len(out.strip().replace(".", "").lstrip("0")) <= 12


@pytest.mark.parametrize("argv", [
    ["amplify", "--beta", "2", "--q", "1", "--blanket-trials", "1", "--epsilon", "0"],
    ["amplify", "--beta", "0.5"],
    ["bogus"],
    ["optimize", "--levels", "1,2", "--segmentation", "S1"],
    ["optimize", "--methods", "nope"],
])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1 and "error" in err


def test_optimize_prints_params(capsys):
    code, out, _ = run(capsys, "optimize", "--n", "5000", "--grid-points", "8")
    assert code == 0
    assert out.startswith("blanket_rate:")
    assert out.count("rate: ") == 4 and "mse_bound:" in out
    again = run(capsys, "optimize", "--n", "5000", "--grid-points", "8")[1]
    assert again == out


def test_optimize_infeasible(capsys):
    code, _, err = run(capsys, "optimize", "--levels", "0.001", "--segmentation", "1",
                       "--delta", "1e-9", "--n", "100", "--grid-points", "4")
    assert code == 2 and "level 1" in err


def test_missing_config_is_io_error(capsys, tmp_path):
    code, _, err = run(capsys, "optimize", "--config", str(tmp_path / "none.yaml"))
    assert code == 3 and "I/O" in err


def test_missing_msnbc_file(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "--msnbc-path", str(tmp_path / "x.seq"))
    assert code == 3


def test_config_file_with_override(capsys, tmp_path):
    cfg = tmp_path / "spec.yaml"
    cfg.write_text("dataset: synthetic\nd: 32\ns: 2\nn: 400\nlevels: [1.0]\n"
                   "segmentation: [1.0]\nm_values: [1.0]\n")
    code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--seed", "3",
                       "--show-estimates")
    assert code == 0
    assert "blanket_rate: 1\n" in out
    estimates = out.split("estimates: [")[1].split("]")[0].split(",")
    assert len(estimates) == 32


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "spec.yaml"
    cfg.write_text("colour: blue\n")
    assert run(capsys, "optimize", "--config", str(cfg))[0] == 1


def test_experiment_single_block(capsys, tmp_path):
    out_path = tmp_path / "r.csv"
    code, _, _ = run(capsys, "experiment", "--dataset", "synthetic", "--d", "16", "--s", "2",
                     "--n", "300", "--m", "1", "--trials", "1", "--out", str(out_path),
                     "--cache-dir", str(tmp_path))
    assert code == 0
    rows = list(csv.reader(out_path.open()))
    assert tuple(rows[0]) == COLUMNS
    assert [r[7] for r in rows[1:]] == ["0", "mean"]
    assert rows[1][9] == rows[2][9]
    assert rows[1][-1] == "true"


def test_experiment_rerun_identical(capsys, tmp_path):
    args = ["experiment", "--n", "1000", "--m", "0.5,2", "--trials", "3",
            "--methods", "segmented,sepmm", "--cache-dir", str(tmp_path)]
    run(capsys, *args, "--out", str(tmp_path / "a.csv"))
    run(capsys, *args, "--out", str(tmp_path / "b.csv"))

    def strip(path):
        idx = COLUMNS.index("runtime_ms")
        return [r[:idx] + r[idx + 1:] for r in csv.reader(path.open())]

    assert strip(tmp_path / "a.csv") == strip(tmp_path / "b.csv")
