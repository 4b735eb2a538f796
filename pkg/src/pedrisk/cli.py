"""Command-line workbench: simulate, perturb, encode, tune, train, predict, evaluate, experiment, scenario."""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import mendelian
from .encoder import ReferenceStructure, build_neighborhoods, encode_cohort, fit_scaler
from .experiment import ExperimentConfig, ExperimentError, FittedModel, run_experiment, scenario_table
from .genetics import build_default_penetrance
from .metrics import bootstrap, calibration_deciles, ipcw_weights
from .network import (ArchitectureSpec, NumericError, SearchSpace, load_checkpoint,
                      random_search, save_checkpoint, summarize_search, train)
from .pedio import read_outcomes, read_pedigrees, write_outcomes, write_pedigrees
from .perturb import MisreportConfig, blank_onset_ages, drop_relatives, impute_onset_ages, perturb_cohort
from .simulate import StructureDistribution, simulate_cohort

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
PREDICT_COLUMNS = ("family_id", "posterior_noncarrier", "posterior_l1", "posterior_l2", "posterior_both", "risk_t")


class _Bench:
    def __init__(self, enabled):
        self.enabled = enabled
        self.stages = {}

    def __call__(self, stage, fn, *a, **kw):
        t0 = time.perf_counter()
        out = fn(*a, **kw)
        self.stages[stage] = round(time.perf_counter() - t0, 4)
        return out

    def emit(self):
        if self.enabled:
            print(json.dumps({"bench_seconds": self.stages}), file=sys.stderr)


def _load_json(path):
    return json.loads(Path(path).read_text()) if path else {}


def _require(args, name):
    if getattr(args, name) is None:
        raise ValueError(f"--{name.replace('_', '-')} is required")
    return getattr(args, name)


def _reference(value):
    if value is None:
        return ReferenceStructure.default()
    if Path(value).suffix == ".json":
        return ReferenceStructure.from_file(value)
    return ReferenceStructure.preset(value)


def _model(cfg):
    return build_default_penetrance(cfg.get("penetrance"))


def _outcomes_for(pedigrees, path):
    table = read_outcomes(path)
    missing = [p.family_id for p in pedigrees if p.family_id not in table]
    if missing:
        raise ValueError(f"no outcome for families {missing[:10]}")
    return np.array([table[p.family_id] for p in pedigrees])


# ---- subcommands -------------------------------------------------------------------

def cmd_simulate(args, bench):
    cfg = _load_json(args.config)
    structure = StructureDistribution.from_dict(cfg["structure"]) if "structure" in cfg else StructureDistribution()
    out = Path(_require(args, "out"))
    cohort = bench("simulate", simulate_cohort, args.n, structure, _model(cfg), args.seed, args.horizon,
                   args.workers, args.prefix)
    write_pedigrees(cohort.pedigrees, out)
    outcomes = Path(args.outcomes) if args.outcomes else out.with_name(out.stem + "_outcomes.csv")
    write_outcomes(cohort.family_ids, cohort.y0, outcomes)
    print(f"wrote {len(cohort)} families to {out} and outcomes to {outcomes}")


def cmd_perturb(args, bench):
    peds = read_pedigrees(_require(args, "input"))
    if args.mode == "misreport":
        cfg = MisreportConfig.from_file(args.config) if args.config else MisreportConfig()
        out = bench("perturb", perturb_cohort, peds, cfg, args.seed)
    elif args.mode == "drop":
        out = [drop_relatives(p, args.fraction, "any", np.random.default_rng([args.seed, i]))
               for i, p in enumerate(peds)]
    elif args.mode == "drop_unaffected":
        out = [drop_relatives(p, args.fraction, "unaffected_only", np.random.default_rng([args.seed, i]))
               for i, p in enumerate(peds)]
    elif args.mode == "blank_onset":
        out = [blank_onset_ages(p, args.fraction, np.random.default_rng([args.seed, i]))
               for i, p in enumerate(peds)]
    else:
        out = [impute_onset_ages(p, args.cutoff) for p in peds]
    write_pedigrees(out, _require(args, "out"))
    print(f"wrote {len(out)} families to {args.out}")


def cmd_encode(args, bench):
    peds = read_pedigrees(_require(args, "input"))
    ref = _reference(args.reference)
    X = bench("encode", encode_cohort, peds, ref, args.seed)
    arrays = {"X": X, "family_ids": np.array([p.family_id for p in peds]),
              "reference": np.array(json.dumps(ref.to_dict()))}
    if args.outcomes:
        arrays["y"] = _outcomes_for(peds, args.outcomes)
    np.savez(_require(args, "out"), **arrays)
    print(f"encoded {len(peds)} families into {X.shape[1]} inputs ({ref.name}, digest {ref.digest()})")


def _load_encoded(path):
    with np.load(path, allow_pickle=False) as d:
        if "y" not in d:
            raise ValueError(f"{path} has no labels; encode with --outcomes")
        ref = ReferenceStructure.from_dict(json.loads(str(d["reference"])))
        return d["X"], d["y"], ref


def _base_spec(args, cfg):
    spec = cfg.get("best", cfg)     # accept a tuning result as a spec file
    spec = dict(spec)
    if "kind" in spec:
        return ArchitectureSpec.from_dict(spec)
    return getattr(ArchitectureSpec, args.kind)(**{"seed": args.seed, **spec})


def cmd_tune(args, bench):
    X, y, ref = _load_encoded(_require(args, "input"))
    cfg = _load_json(args.config)
    space = SearchSpace(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.get("space", {}).items()})
    base = getattr(ArchitectureSpec, args.kind)(**cfg.get("base", {}))
    if base.kind == "logistic":
        raise ValueError("tune supports fcnn and cnn")
    scaler = fit_scaler(X)
    nbr = build_neighborhoods(ref) if base.kind == "cnn" else None
    best, log = bench("tune", random_search, space, scaler.transform(X), y, args.budget, args.seed, base, nbr)
    result = {"best": best.to_dict(), "summary": summarize_search(log), "log": log, "seed": args.seed}
    Path(_require(args, "out")).write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result["summary"]))


def cmd_train(args, bench):
    X, y, ref = _load_encoded(_require(args, "input"))
    spec = _base_spec(args, _load_json(args.config))
    scaler = fit_scaler(X)
    nbr = build_neighborhoods(ref) if spec.kind == "cnn" else None
    res = bench("train", train, spec, scaler.transform(X), y, None, nbr)
    save_checkpoint(_require(args, "out"), res.params, scaler, ref)
    print(f"trained {spec.kind}; final loss {res.loss_trace[-1] if res.loss_trace else float('nan'):.6f}")


def cmd_predict(args, bench):
    peds = read_pedigrees(_require(args, "input"))
    rows = []
    if args.checkpoint:
        params, scaler, ref = load_checkpoint(args.checkpoint)
        fm = FittedModel(params, ref or ReferenceStructure.default(), scaler, args.seed)
        risk = bench("predict", fm.predict_pedigrees, peds)
        rows = [(p.family_id, "", "", "", "", float(r)) for p, r in zip(peds, risk)]
    else:
        post, risk = bench("predict", mendelian.score_cohort, peds, _model(_load_json(args.config)),
                           args.horizon, args.workers)
        rows = [(p.family_id, *map(float, q), float(r)) for p, q, r in zip(peds, post, risk)]
    with open(_require(args, "out"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICT_COLUMNS)
        w.writerows(rows)
    print(f"wrote {len(rows)} predictions to {args.out}")


def _read_predictions(path):
    with open(path, newline="") as fh:
        return {row["family_id"]: float(row["risk_t"]) for row in csv.DictReader(fh)}


def cmd_evaluate(args, bench):
    if not args.pred:
        raise ValueError("give at least one --pred NAME=PATH")
    outcomes = read_outcomes(_require(args, "outcomes"))
    ids = list(outcomes)
    preds = {}
    for item in args.pred:
        name, _, path = item.partition("=")
        if not path:
            raise ValueError(f"--pred expects NAME=PATH, got {item!r}")
        table = _read_predictions(path)
        missing = [i for i in ids if i not in table]
        if missing:
            raise ValueError(f"{name}: no prediction for families {missing[:10]}")
        preds[name] = np.array([table[i] for i in ids])
    y = np.array([outcomes[i] for i in ids])
    w = None
    if args.followup:
        with open(args.followup, newline="") as fh:
            fu = {r["family_id"]: r for r in csv.DictReader(fh)}
        t = np.array([float(fu[i]["time"]) for i in ids])
        e = np.array([int(fu[i]["event"]) for i in ids])
        c = np.array([int(fu[i]["censored"]) for i in ids])
        w = ipcw_weights(t, e, c, args.horizon)
    reference = args.reference if args.reference in preds else next(iter(preds))
    rep = bench("bootstrap", bootstrap, preds, y, w, args.boot, args.seed, reference, args.correlation)
    rep.calibration = {k: calibration_deciles(v, y, w) for k, v in preds.items()}
    out = Path(_require(args, "out"))
    out.mkdir(parents=True, exist_ok=True)
    d = rep.to_dict()
    (out / "report.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    with open(out / "performance.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["model", "metric", "estimate", "ci_lo", "ci_hi", "rho"])
        for m in rep.models:
            for k, v in rep.point[m].items():
                ci = rep.ci[m].get(k) or (None, None)
                wr.writerow([m, k, v, *ci, rep.correlation.get(m)])
    with open(out / "comparisons.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["metric", "a", "b", "a_beats_b", "tie"])
        for metric, table in rep.wins.items():
            for (a, b), v in table.items():
                wr.writerow([metric, a, b, v, rep.ties[metric][(a, b)]])
    with open(out / "deciles.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["model", "bin", "lower", "upper", "mean_predicted", "observed", "count"])
        for m, rows in rep.calibration.items():
            for r in rows:
                wr.writerow([m, r["bin"], r["lower"], r["upper"], r["mean_predicted"], r["observed"], r["count"]])
    for m in rep.models:
        perf = rep.point[m]
        print(f"{m}: " + ", ".join(f"{k}={'NA' if v is None else f'{v:.4f}'}" for k, v in perf.items()))


def cmd_experiment(args, bench):
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out:
        cfg["out_dir"] = args.out
    cfg["workers"] = args.workers
    config = ExperimentConfig.from_dict(cfg)
    res = run_experiment(config, bench=args.bench)
    for row in res["curves"]:
        print(f"{row['model']:>9} n={row['n_train']:>7} auc={row['auc']:.4f} rho={row['rho']:.3f}")
    for block, rep in res["reports"].items():
        for m in rep["models"]:
            perf = rep["performance"][m]
            print(f"[{block}] {m}: O/E={perf['oe']:.3f} AUC={perf['auc']:.4f}")
    print(f"artifacts in {config.out_dir} (config hash {config.digest()})")


def cmd_scenario(args, bench):
    cfg = _load_json(args.config)
    model = _model(cfg)
    models = {"mendelian": "mendelian"}
    for item in args.checkpoint or ():
        name, _, path = item.partition("=")
        if not path:
            raise ValueError(f"--checkpoint expects NAME=PATH, got {item!r}")
        params, scaler, ref = load_checkpoint(path)
        models[name] = FittedModel(params, ref or ReferenceStructure.default(), scaler, 0)
    rows = bench("scenario", scenario_table, models, model, args.horizon)
    text = json.dumps({"rows": rows}, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


# ---- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--config", help="JSON config for the subcommand")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--bench", action="store_true", help="report wall-clock seconds per stage")

    parser = argparse.ArgumentParser(prog="pedrisk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a cohort of families")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--horizon", "-t", type=int, default=10)
    p.add_argument("--prefix", default="F")
    p.add_argument("--outcomes", help="outcomes CSV (default: <out>_outcomes.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("perturb", parents=[common], help="misreport or thin out family histories")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", default="misreport",
                   choices=("misreport", "drop", "drop_unaffected", "blank_onset", "impute"))
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--cutoff", type=int, default=50)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("encode", parents=[common], help="map families onto a reference structure")
    p.add_argument("--input", required=True)
    p.add_argument("--reference", help="preset name (q3s, q1s, size19, counselee_only) or JSON file")
    p.add_argument("--outcomes")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("tune", parents=[common], help="random search over network hyperparameters")
    p.add_argument("--input", required=True, help="encoded .npz with labels")
    p.add_argument("--kind", choices=("fcnn", "cnn"), default="fcnn")
    p.add_argument("--budget", type=int, default=10)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", parents=[common], help="train a network and write a checkpoint")
    p.add_argument("--input", required=True, help="encoded .npz with labels")
    p.add_argument("--kind", choices=("fcnn", "cnn", "logistic"), default="fcnn")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="Mendelian or network predictions")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", help="network checkpoint; omit for the Mendelian model")
    p.add_argument("--horizon", "-t", type=int, default=10)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="metrics, bootstrap comparisons, deciles")
    p.add_argument("--pred", action="append", help="NAME=PATH of a predictions CSV (repeatable)")
    p.add_argument("--outcomes", required=True)
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--reference", default="mendelian", help="model the correlations are taken against")
    p.add_argument("--correlation", choices=("pearson", "spearman"), default="pearson")
    p.add_argument("--followup", help="CSV family_id,time,event,censored for censoring weights")
    p.add_argument("--horizon", "-t", type=float, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common], help="run a full simulation experiment")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("scenario", parents=[common], help="risks for the fixed scenario family")
    p.add_argument("--checkpoint", action="append", help="NAME=PATH of a network checkpoint (repeatable)")
    p.add_argument("--horizon", "-t", type=int, default=10)
    p.set_defaults(func=cmd_scenario)
    return parser


def _is_numeric(exc):
    while exc is not None:
        if isinstance(exc, (NumericError, FloatingPointError)):
            return True
        exc = exc.__cause__
    return False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # experiment configs carry their own seed unless --seed is given
    if args.seed is None and args.func is not cmd_experiment:
        args.seed = 0
    bench = _Bench(args.bench)
    try:
        args.func(args, bench)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if _is_numeric(exc.__cause__) else EXIT_INVALID
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    bench.emit()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
