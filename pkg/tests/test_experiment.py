import json

import numpy as np
import pytest

from pedrisk import mendelian
from pedrisk.encoder import fit_scaler
from pedrisk.experiment import (SCENARIOS, ExperimentConfig, ExperimentError, derive_seed, run_experiment,
                                scenario_family, scenario_table, score_mendelian, select_spec)
from pedrisk.metrics import auc
from pedrisk.network import predict, train
from pedrisk.genetics import build_default_penetrance
from pedrisk.pedigree import Member, Pedigree, FEMALE, validate

FAST = {"fcnn": {"epochs": 2}, "cnn": {"epochs": 1}, "logistic": {"epochs": 2}}


def test_mendelian_only_run_is_calibrated_and_reproducible(tmp_path):
    cfg = ExperimentConfig(seed=3, train_sizes=(), test_size=1500, models=("mendelian",), n_boot=200,
                           out_dir=str(tmp_path / "a"))
    res = run_experiment(cfg)
    observed = res["y"].sum()
    expected = res["predictions"]["clean"]["mendelian"].sum()
    assert abs(observed - expected) < 4 * np.sqrt(expected)
    lo, hi = res["reports"]["clean"]["ci"]["mendelian"]["oe"]
    assert lo <= res["reports"]["clean"]["performance"]["mendelian"]["oe"] <= hi
    assert res["curves"] == [] and len(res["scenarios"]) == 5
    again = run_experiment(ExperimentConfig(**{**cfg.to_dict(), "out_dir": str(tmp_path / "b"), "workers": 2}))
    assert again["tag"] == res["tag"]
    # config.json records the output directory and worker count, which differ here
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name == "config.json":
            continue
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_small_full_roster_with_misreporting(tmp_path):
    cfg = ExperimentConfig(seed=1, train_sizes=(150, 300), test_size=300, specs=FAST, misreport={}, n_boot=20,
                           extra_losses=("cross_entropy",), extra_references=("q1s",),
                           out_dir=str(tmp_path))
    res = run_experiment(cfg, bench=True)
    assert {(r["model"], r["n_train"]) for r in res["curves"]} == {(k, n) for k in ("fcnn", "cnn", "logistic")
                                                                   for n in (150, 300)}
    assert set(res["reports"]) == {"clean", "misreported"}
    assert set(res["reports"]["misreported"]["models"]) == {"mendelian", "fcnn", "cnn", "logistic"}
    assert "clean_mendelian" in res["reports"]["misreported"]
    assert set(res["predictions"]) == {"clean", "misreported"} and len(res["y"]) == 300
    variants = {r["variant"] for r in res["sensitivity"]}
    assert variants == {"loss=cross_entropy", "reference=q1s"}
    assert all(r["config_hash"] == cfg.digest() for r in res["curves"])
    for name in ("config.json", "curves.csv", "report.json", "performance.csv", "scenarios.csv",
                 "deciles.json", "sensitivity.json", "selection.json", "bench.json"):
        assert (tmp_path / name).exists()
    assert "train_cnn_300" in json.loads((tmp_path / "bench.json").read_text())["seconds"]
    assert {(r["block"], r["n_train"]) for r in res["selection"]} == {("clean", 150), ("clean", 300),
                                                                       ("loss=cross_entropy", 300),
                                                                       ("misreported", 300)}
    assert all(len(r["candidates"]) == 3 for r in res["selection"])
    assert all("weight_decay" in r for r in res["curves"] if r["model"] == "fcnn")


def test_config_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"seed": 1, "bogus": 2})
    with pytest.raises(ValueError):
        ExperimentConfig(models=("cnn",))
    with pytest.raises(ValueError):
        ExperimentConfig(reference="nope")
    with pytest.raises(ValueError):
        ExperimentConfig(select={"fcnn": {"bogus": [1]}})
    with pytest.raises(ValueError):
        ExperimentConfig(select={"fcnn": {"weight_decay": []}})
    with pytest.raises(ValueError):
        ExperimentConfig(val_fraction=1.0)
    cfg = ExperimentConfig(seed=9, train_sizes=(10, 5), select={"cnn": {"lr": (1e-3, 3e-3)}})
    assert cfg.train_sizes == (5, 10)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_file(path) == cfg
    assert ExperimentConfig(seed=9, out_dir="x", workers=4).digest() == ExperimentConfig(seed=9).digest()
    assert ExperimentConfig(seed=9).digest() != ExperimentConfig(seed=8).digest()


def test_selection_uses_held_out_tail():
    rng = np.random.default_rng(5)
    X = rng.random((500, 6))
    y = (X[:, 0] + 0.3 * rng.random(500) > 0.8).astype(float)
    cfg = ExperimentConfig(select={"fcnn": {"epochs": [0, 20]}}, val_fraction=0.2)
    spec, log = select_spec(cfg, "fcnn", X, y)
    sc = fit_scaler(X[:400])
    expect = []
    for epochs in (0, 20):
        res = train(cfg.spec_for("fcnn", epochs=epochs), sc.transform(X[:400]), y[:400])
        expect.append(auc(predict(res.params, sc.transform(X[400:])), y[400:]))
    assert [(r["epochs"], r["val_auc"]) for r in log] == list(zip((0, 20), expect))
    assert expect[1] > expect[0] and spec.epochs == 20
    spec, log = select_spec(ExperimentConfig(select={}), "fcnn", X, y)
    assert log == [] and spec == ExperimentConfig().spec_for("fcnn")


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(0, "train") == derive_seed(0, "train")
    assert len({derive_seed(0, s) for s in ("train", "test", "encode:train", "encode:test")}) == 4


def test_spec_overrides_layer():
    cfg = ExperimentConfig(specs={"cnn": {"epochs": 3}})
    spec = cfg.spec_for("cnn", loss="cross_entropy")
    assert spec.epochs == 3 and spec.loss == "cross_entropy" and spec.hidden == (10, 5)
    assert cfg.spec_for("fcnn").hidden == (30, 10)


def test_scenario_families():
    fams = [scenario_family(s) for s in SCENARIOS]
    assert all(validate(p) == [] for p in fams)
    assert [int(p.bc_status.sum() + p.oc_status.sum()) for p in fams] == [0, 1, 1, 2, 3]
    with pytest.raises(ValueError):
        scenario_family("F")


def test_mendelian_scenarios_strictly_increase():
    rows = scenario_table({"mendelian": "mendelian"})
    risks = [r["mendelian"] for r in rows]
    assert all(a < b for a, b in zip(risks, risks[1:]))
    assert rows[0]["mendelian_counselee_only"] > 0


def test_failed_scoring_names_families():
    model = build_default_penetrance({"lifetime": {"female": {"breast": [0.0, 0.0, 0.0, 0.0]}}})
    bad = Pedigree.from_members([Member(0, 1, None, FEMALE, 30),
                                 Member(1, None, None, FEMALE, 60, bc_status=1, bc_onset_age=50)], "bad1")
    good = Pedigree.from_members([Member(0, None, None, FEMALE, 30)], "good1")
    with pytest.raises(ExperimentError) as exc:
        score_mendelian([good, bad], model, 10)
    assert exc.value.family_ids == ["bad1"] and exc.value.stage == "score"
    assert isinstance(exc.value.__cause__, FloatingPointError)
    assert np.isfinite(mendelian.score_cohort([good], model, 10)[1]).all()
