import csv
import json

import numpy as np
import pytest

from pedrisk.cli import PREDICT_COLUMNS, main
from pedrisk.pedio import read_outcomes, read_pedigrees


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--n", "400", "--seed", "2", "--out", str(d / "fams.csv")]) == 0
    return d


def test_simulate_writes_families_and_outcomes(workdir):
    fams = read_pedigrees(workdir / "fams.csv")
    outcomes = read_outcomes(workdir / "fams_outcomes.csv")
    assert len(fams) == 400 and set(outcomes) == {p.family_id for p in fams}


def test_mendelian_predict_and_evaluate(workdir):
    pred = workdir / "mendel.csv"
    assert main(["predict", "--input", str(workdir / "fams.csv"), "--out", str(pred)]) == 0
    with open(pred) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == PREDICT_COLUMNS and len(rows) == 400
    post = np.array([[float(r[c]) for c in PREDICT_COLUMNS[1:5]] for r in rows])
    assert np.allclose(post.sum(axis=1), 1.0)
    out = workdir / "eval"
    assert main(["evaluate", "--pred", f"mendelian={pred}", "--pred", f"copy={pred}",
                 "--outcomes", str(workdir / "fams_outcomes.csv"), "--boot", "20", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["comparisons"]["auc"]["mendelian>copy"] == 0
    for name in ("performance.csv", "comparisons.csv", "deciles.csv"):
        assert (out / name).exists()


def test_encode_train_predict_round_trip(workdir):
    npz = workdir / "enc.npz"
    assert main(["encode", "--input", str(workdir / "fams.csv"), "--outcomes", str(workdir / "fams_outcomes.csv"),
                 "--out", str(npz)]) == 0
    with np.load(npz) as d:
        assert d["X"].shape == (400, 182)
    spec = workdir / "spec.json"
    spec.write_text(json.dumps({"epochs": 2}))
    ckpt = workdir / "cnn.bin"
    assert main(["train", "--input", str(npz), "--kind", "cnn", "--config", str(spec), "--out", str(ckpt)]) == 0
    pred = workdir / "cnn.csv"
    assert main(["predict", "--input", str(workdir / "fams.csv"), "--checkpoint", str(ckpt),
                 "--out", str(pred)]) == 0
    with open(pred) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["posterior_both"] == "" and 0 < float(rows[0]["risk_t"]) < 1
    scen = workdir / "scen.json"
    assert main(["scenario", "--checkpoint", f"cnn={ckpt}", "--out", str(scen)]) == 0
    rows = json.loads(scen.read_text())["rows"]
    assert [r["scenario"] for r in rows] == ["A", "B", "C", "D", "E"] and "cnn" in rows[0]


def test_tune_writes_best_spec(workdir):
    npz = workdir / "enc_tune.npz"
    main(["encode", "--input", str(workdir / "fams.csv"), "--outcomes", str(workdir / "fams_outcomes.csv"),
          "--out", str(npz)])
    cfg = workdir / "tune.json"
    cfg.write_text(json.dumps({"base": {"epochs": 1}, "space": {"layers": [1, 1], "widths": [3, 5]}}))
    out = workdir / "best.json"
    assert main(["tune", "--input", str(npz), "--budget", "2", "--config", str(cfg), "--out", str(out)]) == 0
    best = json.loads(out.read_text())
    assert best["summary"]["n"] == 2 and best["best"]["kind"] == "fcnn"


def test_perturb_modes(workdir):
    src = str(workdir / "fams.csv")
    for mode in ("misreport", "drop", "drop_unaffected", "blank_onset", "impute"):
        out = workdir / f"p_{mode}.csv"
        assert main(["perturb", "--input", src, "--mode", mode, "--fraction", "1", "--out", str(out)]) == 0
        assert len(read_pedigrees(out)) == 400
    assert all(len(p) == 1 for p in read_pedigrees(workdir / "p_drop.csv"))


def test_validation_failures_exit_2(workdir, tmp_path):
    assert main(["predict", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["encode", "--input", str(workdir / "fams.csv"), "--reference", "nope",
                 "--out", str(tmp_path / "e.npz")]) == 2
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert main(["experiment", "--config", str(bad), "--out", str(tmp_path / "exp")]) == 2
    bad.write_text("{not json")
    assert main(["simulate", "--n", "5", "--config", str(bad), "--out", str(tmp_path / "s.csv")]) == 2


def test_numeric_failure_exits_3(workdir, tmp_path):
    cfg = tmp_path / "pen.json"
    cfg.write_text(json.dumps({"penetrance": {"lifetime": {"female": {"breast": [0, 0, 0, 0]}}}}))
    fams = read_pedigrees(workdir / "fams.csv")
    assert any(p.bc_status[1:].any() for p in fams)
    assert main(["predict", "--input", str(workdir / "fams.csv"), "--config", str(cfg),
                 "--out", str(tmp_path / "p.csv")]) == 3


def test_experiment_subcommand(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"train_sizes": [], "test_size": 200, "models": ["mendelian"], "n_boot": 10}))
    out = tmp_path / "exp"
    assert main(["experiment", "--config", str(cfg), "--seed", "4", "--out", str(out), "--bench"]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 4
    assert "bench_seconds" in capsys.readouterr().err
