import math
import os
from pathlib import Path

import pytest

import iclcot

SOURCE = Path(os.environ.get("ICLCOT_SOURCE_DIR", Path(__file__).resolve().parents[2]))


def test_version_string():
    assert isinstance(iclcot.version(), str) and iclcot.version()


def test_worked_example():
    assert iclcot.autocot_query_loss(1.3, 1.0, 20) == pytest.approx(0.0045, abs=1e-15)


def test_prune_median_and_inf():
    kept, eps = iclcot.prune([0.4, 0.1, 0.9, 0.2], "median")
    assert kept == [1, 3]
    assert eps == pytest.approx(0.3)
    kept, eps = iclcot.prune([0.4, 0.1], "inf")
    assert kept == [0, 1] and math.isinf(eps)


def test_prune_empty_raises():
    with pytest.raises(iclcot.IclcotError):
        iclcot.prune([0.5, 0.7], 0.1)


def test_policy_gradient_sums_to_zero():
    g = iclcot.policy_gradient([1.0, 2.0, 0.5], [0, 1, 1], [0.1, -0.2, 0.3])
    assert len(g) == 3
    assert sum(g) == pytest.approx(0.0, abs=1e-12)


def test_least_squares_recovers_weights():
    p = iclcot.sample_prompt("linear", d=3, k=8, seed=5)
    w = iclcot.least_squares_fit(p["x"], p["y"])
    pred = sum(a * b for a, b in zip(w, p["query_x"]))
    assert pred == pytest.approx(p["query_y"], abs=1e-9)


def test_metrics():
    assert iclcot.mse_normalized(3.0, 1.0, 4) == pytest.approx(1.0)
    assert iclcot.auc_binarized([0.1, 0.9, -0.5, 0.4], [-1.0, 2.0, -3.0, 1.0]) == pytest.approx(1.0)
    assert iclcot.sign_test_p([-1.0] * 10) < 0.01


def test_cli_train_roundtrip(tmp_path):
    code, out, err = iclcot.run("train", SOURCE / "tests/acceptance/determinism.toml", tmp_path)
    assert code == 0, err
    ckpts = list(tmp_path.glob("runs/*/checkpoint.bin"))
    assert len(ckpts) == 1
    info = iclcot.checkpoint_info(ckpts[0])
    assert info["config"]["n_layers"] == 2
    assert info["parameters"] > 0


def test_cli_config_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\n[task]\nfamily = \"linear\"\n")
    code, _, err = iclcot.run("train", bad, tmp_path)
    assert code == 2
    assert "d" in err
