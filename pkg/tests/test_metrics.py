import itertools

import numpy as np
import pytest

from pedrisk.metrics import (auc, average_precision, bootstrap, calibration_deciles,
                             censoring_survival, correlation, horizon_labels, ipcw_weights, metrics,
                             observed_expected, paired_win_share)


def pair_count_auc(pred, y):
    pos = [p for p, t in zip(pred, y) if t == 1]
    neg = [p for p, t in zip(pred, y) if t == 0]
    s = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return s / (len(pos) * len(neg))


def test_auc_hand_example():
    pred, y = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    assert pair_count_auc(pred, y) == 0.75
    assert auc(pred, y) == 0.75


def test_auc_matches_pair_count_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pred = rng.integers(0, 5, size=30) / 4
        y = rng.integers(0, 2, size=30)
        if 0 < y.sum() < 30:
            assert auc(pred, y) == pytest.approx(pair_count_auc(pred, y), abs=1e-14)


def test_auc_edge_cases():
    assert auc(np.full(10, 0.3), np.r_[np.ones(3), np.zeros(7)]) == 0.5
    assert auc([0.1, 0.2], [1, 1]) is None
    rng = np.random.default_rng(1)
    pred, y = rng.random(500), rng.integers(0, 2, size=500)
    assert auc(np.log(pred) * 3 + 1, y) == auc(pred, y)


def test_weighted_auc_equals_replicated_rows():
    pred = np.array([0.2, 0.5, 0.4, 0.9, 0.1])
    y = np.array([0, 1, 0, 1, 1])
    w = np.array([1, 2, 3, 1, 2])
    assert auc(pred, y, w) == pytest.approx(auc(np.repeat(pred, w), np.repeat(y, w)))


def test_random_scores_pr_auc_near_prevalence():
    rng = np.random.default_rng(2)
    y = (rng.random(20_000) < 0.029).astype(float)
    assert average_precision(rng.random(20_000), y) == pytest.approx(0.029, abs=0.005)
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0


def test_point_metrics():
    pred = np.array([0.1, 0.2, 0.3, 0.4])
    y = np.array([0, 0, 1, 0])
    m = metrics(pred, y)
    assert m["oe"] == pytest.approx(1.0)
    assert m["brier"] == pytest.approx((0.01 + 0.04 + 0.49 + 0.16) / 4)
    assert m["brier_sqrt"] == pytest.approx(np.sqrt(m["brier"]))
    assert observed_expected(np.zeros(3), [0, 1, 0]) is None
    with pytest.raises(ValueError):
        metrics([1.2], [1])


def test_bootstrap_identical_predictions_tie():
    rng = np.random.default_rng(3)
    p, y = rng.random(300), rng.integers(0, 2, size=300)
    rep = bootstrap({"a": p, "b": p.copy()}, y, B=50, seed=0)
    for m in ("auc", "pr_auc", "brier_sqrt", "oe"):
        assert rep.wins[m][("a", "b")] == 0 and rep.ties[m][("a", "b")] == 1


def test_bootstrap_shares_sum_to_one_and_are_exact():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, size=200)
    a, b = rng.random(200), rng.random(200)
    rep = bootstrap({"a": a, "b": b}, y, B=40, seed=5)
    for m in ("auc", "pr_auc", "brier_sqrt", "oe"):
        assert rep.wins[m][("a", "b")] + rep.wins[m][("b", "a")] + rep.ties[m][("a", "b")] == pytest.approx(1)
    # replay the shared resamples by hand
    r = np.random.default_rng(5)
    count = 0
    for _ in range(40):
        idx = r.integers(0, 200, size=200)
        count += auc(a[idx], y[idx]) > auc(b[idx], y[idx])
    assert rep.wins["auc"][("a", "b")] == count / 40


def test_bootstrap_single_replicate_and_dominance():
    rng = np.random.default_rng(6)
    y = (rng.random(400) < 0.2).astype(float)
    perfect = y * 0.9 + 0.05
    rep = bootstrap({"perfect": perfect, "noise": rng.random(400)}, y, B=1, seed=0, reference="perfect")
    lo, hi = rep.ci["perfect"]["auc"]
    assert lo == hi
    assert rep.correlation["perfect"] == pytest.approx(1.0)
    assert paired_win_share(perfect, rng.random(400), y, B=50) == 1.0
    with pytest.raises(ValueError):
        bootstrap({"a": perfect}, y, B=0)
    d = rep.to_dict()
    assert "perfect>noise" in d["comparisons"]["auc"]


def test_oe_comparison_uses_distance_from_one():
    y = np.r_[np.ones(100), np.zeros(900)]
    rep = bootstrap({"calibrated": np.full(1000, 0.1), "double": np.full(1000, 0.2)}, y, B=30, seed=1)
    assert rep.wins["oe"][("calibrated", "double")] == 1.0


def test_correlation_methods():
    x = np.arange(10.0)
    assert correlation(x, x ** 3, "spearman") == pytest.approx(1.0)
    assert correlation(x, x ** 3, "pearson") < 1
    with pytest.raises(ValueError):
        correlation(x, x, "kendall")


def test_ipcw_hand_fixture():
    t = [1, 2, 3, 4, 6, 7]
    e = [0, 1, 0, 1, 0, 1]
    c = [1, 0, 1, 0, 1, 0]
    jumps, G = censoring_survival(t, c)
    assert np.allclose(G[:2], [5 / 6, 0.625])
    assert np.allclose(ipcw_weights(t, e, c, 5), [0, 1.2, 0, 1.6, 1.6, 1.6])
    assert np.array_equal(horizon_labels(t, e, 5), [0, 1, 0, 1, 0, 0])


def test_ipcw_limits():
    t = np.array([3.0, 15, 8, 12])
    assert np.array_equal(ipcw_weights(t, [1, 0, 1, 0], [0, 0, 0, 0], 10), np.ones(4))
    assert not ipcw_weights(np.zeros(4), np.zeros(4), np.ones(4), 10).any()
    with pytest.raises(ValueError):
        ipcw_weights([-1.0], [0], [1], 10)
    with pytest.raises(ValueError):
        ipcw_weights([1.0], [1], [1], 10)


def test_calibrated_deciles_within_three_se():
    rng = np.random.default_rng(7)
    p = rng.beta(2, 30, size=20_000)
    y = (rng.random(20_000) < p).astype(float)
    rows = calibration_deciles(p, y)
    assert len(rows) == 10 and sum(r["count"] for r in rows) == 20_000
    for r in rows:
        m = r["mean_predicted"]
        assert abs(r["observed"] - m) < 3 * np.sqrt(m * (1 - m) / r["count"])
    assert all(a["upper"] <= b["lower"] for a, b in zip(rows, rows[1:]))


def test_deciles_degenerate_inputs():
    rows = calibration_deciles(np.full(50, 0.2), np.r_[np.ones(10), np.zeros(40)])
    assert all(r["mean_predicted"] == pytest.approx(0.2) for r in rows)
    y = np.r_[np.ones(30), np.zeros(70)]
    rows = calibration_deciles(y, y)
    assert all(r["observed"] == r["mean_predicted"] for r in rows)
    with pytest.raises(ValueError):
        calibration_deciles([0.1], [0])
