"""Simulation experiments: sample-size curves, model comparison reports, scenario tables."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import mendelian
from .encoder import (ReferenceStructure, build_neighborhoods, encode_cohort, fit_scaler,
                      summarize_loss)
from .genetics import PenetranceModel, build_default_penetrance
from .metrics import auc, bootstrap, calibration_deciles, correlation, metrics
from .network import ArchitectureSpec, NetworkParams, predict, train
from .pedigree import FEMALE, MALE, Member, Pedigree
from .perturb import MisreportConfig, perturb_cohort
from .simulate import StructureDistribution, simulate_cohort

NN_KINDS = ("fcnn", "cnn", "logistic")
ROSTER = ("mendelian",) + NN_KINDS

# defaults used by experiments; see ArchitectureSpec for the library defaults
DEFAULT_SPECS = {
    "fcnn": {"weight_decay": 3e-5, "lr_schedule": "cosine"},
    "cnn": {"lr": 3e-3, "weight_decay": 2e-5, "lr_schedule": "cosine"},
    "logistic": {"lr_schedule": "cosine"},
}
# grids picked per training set by validation AUC on a held-out tail of the training families
DEFAULT_SELECT = {"fcnn": {"weight_decay": [1e-5, 2e-5, 3e-5]}}


class ExperimentError(RuntimeError):
    """A pipeline stage failed; carries the stage name and offending family ids."""

    def __init__(self, stage, message, family_ids=()):
        self.stage = stage
        self.family_ids = list(family_ids)
        ids = f" (families: {', '.join(map(str, self.family_ids[:20]))})" if self.family_ids else ""
        super().__init__(f"stage '{stage}' failed: {message}{ids}")


def derive_seed(seed: int, stream: str) -> int:
    """Independent integer seed for a named stream."""
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    train_sizes: tuple = (2500, 10000, 50000)
    test_size: int = 20000
    horizon: int = 10
    models: tuple = ROSTER
    specs: dict = field(default_factory=dict)
    select: dict | None = None          # {kind: {spec field: [values]}}; None uses DEFAULT_SELECT
    val_fraction: float = 0.2
    reference: str = "q3s"
    misreport: dict | None = None       # MisreportConfig fields; None skips the misreporting block
    misreport_train: bool = True        # networks in that block train on misreported families
    extra_losses: tuple = ()            # also train each network at the largest size with these losses
    extra_references: tuple = ()        # also train the cnn at the largest size on these references
    n_boot: int = 1000
    penetrance: dict | None = None
    structure: dict | None = None
    workers: int = 1
    out_dir: str = "experiment_out"

    def __post_init__(self):
        object.__setattr__(self, "train_sizes", tuple(sorted(int(n) for n in self.train_sizes)))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "extra_losses", tuple(self.extra_losses))
        object.__setattr__(self, "extra_references", tuple(self.extra_references))
        unknown = set(self.models) - set(ROSTER)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")
        if "mendelian" not in self.models:
            raise ValueError("the roster must include the mendelian model (it anchors correlations)")
        if self.test_size < 10 or min(self.train_sizes, default=1) < 1:
            raise ValueError("test size must be at least 10 and train sizes positive")
        if set(self.models) & set(NN_KINDS) and not self.train_sizes:
            raise ValueError("network models need at least one training size")
        if self.horizon < 1 or self.n_boot < 1:
            raise ValueError("horizon and n_boot must be at least 1")
        ReferenceStructure.preset(self.reference)
        for name in self.extra_references:
            ReferenceStructure.preset(name)
        for loss in self.extra_losses:
            ArchitectureSpec(loss=loss)
        for kind in self.specs:
            if kind not in NN_KINDS:
                raise ValueError(f"spec overrides given for unknown network {kind!r}")
        if self.select is not None:
            object.__setattr__(self, "select", {k: {f: list(v) for f, v in g.items()} for k, g in self.select.items()})
        for kind, grid in self.grids().items():
            if kind not in NN_KINDS:
                raise ValueError(f"selection grid given for unknown network {kind!r}")
            if not all(grid.values()):
                raise ValueError(f"empty selection grid for {kind!r}")
            for values in itertools.product(*grid.values()):
                try:
                    self.spec_for(kind, **dict(zip(grid, values)))
                except TypeError as exc:
                    raise ValueError(f"bad selection grid for {kind!r}: {exc}") from None
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("train_sizes", "models", "extra_losses", "extra_references"):
            d[k] = list(d[k])
        return d

    def digest(self) -> str:
        """Hash of everything that affects numbers (the output directory and workers do not)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def spec_for(self, kind: str, n_extra: int = 0, **overrides) -> ArchitectureSpec:
        kw = {**DEFAULT_SPECS[kind], **self.specs.get(kind, {}), **overrides}
        kw.setdefault("seed", derive_seed(self.seed, f"init:{kind}"))
        return getattr(ArchitectureSpec, kind)(n_extra=n_extra, **kw)

    def grids(self) -> dict:
        return DEFAULT_SELECT if self.select is None else self.select

    def penetrance_model(self) -> PenetranceModel:
        return build_default_penetrance(self.penetrance)

    def structure_distribution(self) -> StructureDistribution:
        return StructureDistribution() if self.structure is None else StructureDistribution.from_dict(self.structure)


# ---- stage helpers ----------------------------------------------------------

def score_mendelian(pedigrees, model, t, workers=1, stage="score"):
    """Risks for every family; on failure, reports the families that cannot be scored."""
    try:
        return mendelian.score_cohort(pedigrees, model, t, workers=workers)[1]
    except Exception as exc:
        bad = []
        for p in pedigrees:
            try:
                mendelian.future_risk(p, t, model)
            except Exception:
                bad.append(p.family_id)
        raise ExperimentError(stage, str(exc), bad) from exc


@dataclass
class FittedModel:
    """A trained network with its encoding pipeline."""

    params: NetworkParams
    ref: ReferenceStructure
    scaler: object
    encode_seed: int

    def predict_pedigrees(self, pedigrees, seed: int | None = None) -> np.ndarray:
        X = encode_cohort(pedigrees, self.ref, self.encode_seed if seed is None else seed)
        return predict(self.params, self.scaler.transform(X))


def fit_network(spec: ArchitectureSpec, pedigrees, y, ref: ReferenceStructure, encode_seed: int,
                X=None) -> FittedModel:
    """Encode, scale on the training set, train."""
    if X is None:
        X = encode_cohort(pedigrees, ref, encode_seed)
    scaler = fit_scaler(X)
    nbr = build_neighborhoods(ref) if spec.kind == "cnn" else None
    res = train(spec, scaler.transform(X), y, nbr=nbr)
    return FittedModel(res.params, ref, scaler, encode_seed)


def select_spec(config: ExperimentConfig, kind: str, X, y, **overrides):
    """Best grid point for ``kind`` by AUC on the last ``val_fraction`` of the rows.

    Ties keep the earlier grid point. Returns the spec and one log row per candidate.
    """
    grid = config.grids().get(kind, {})
    if not grid:
        return config.spec_for(kind, **overrides), []
    n_fit = int(round(len(y) * (1 - config.val_fraction)))
    X_fit, X_val = X[:n_fit], X[n_fit:]
    scaler = fit_scaler(X_fit)
    nbr = None
    best, best_auc, log = None, -np.inf, []
    for values in itertools.product(*grid.values()):
        choice = dict(zip(grid, values))
        spec = config.spec_for(kind, **{**overrides, **choice})
        if nbr is None and spec.kind == "cnn":
            nbr = build_neighborhoods(ReferenceStructure.preset(config.reference))
        res = train(spec, scaler.transform(X_fit), y[:n_fit], nbr=nbr)
        score = auc(predict(res.params, scaler.transform(X_val)), y[n_fit:])
        log.append({**choice, "val_auc": score})
        if score is not None and score > best_auc:
            best, best_auc = spec, score
    return (best or config.spec_for(kind, **overrides)), log


# ---- scenarios -----------------------------------------------------------------

SCENARIOS = ("A", "B", "C", "D", "E")
SCENARIO_TEXT = {
    "A": "no affected relatives",
    "B": "maternal grandmother breast cancer at 80",
    "C": "maternal grandmother breast cancer at 60",
    "D": "C plus mother breast cancer at 50",
    "E": "D plus mother ovarian cancer at 60",
}


def scenario_family(name: str) -> Pedigree:
    """Counselee aged 40 with parents, grandparents, a maternal aunt, two maternal uncles and a paternal aunt."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}")
    # id, mother, father, sex, age
    rows = [(0, 1, 2, FEMALE, 40), (1, 3, 4, FEMALE, 66), (2, 5, 6, MALE, 68),
            (3, None, None, FEMALE, 88), (4, None, None, MALE, 90),
            (5, None, None, FEMALE, 87), (6, None, None, MALE, 89),
            (7, 3, 4, FEMALE, 63), (8, 3, 4, MALE, 60), (9, 3, 4, MALE, 64), (10, 5, 6, FEMALE, 65)]
    bc = {}
    oc = {}
    if name == "B":
        bc[3] = 80
    if name in ("C", "D", "E"):
        bc[3] = 60
    if name in ("D", "E"):
        bc[1] = 50
    if name == "E":
        oc[1] = 60
    members = [Member(i, mo, fa, sex, age, bc_status=int(i in bc), bc_onset_age=bc.get(i, 0),
                      oc_status=int(i in oc), oc_onset_age=oc.get(i, 0))
               for i, mo, fa, sex, age in rows]
    return Pedigree.from_members(members, family_id=f"scenario_{name}")


def scenario_table(models: dict, model: PenetranceModel | None = None, t: int = 10) -> list:
    """One row per scenario with a risk per model.

    ``models`` maps a name to ``"mendelian"`` or to a :class:`FittedModel`.
    The Mendelian counselee-only baseline is reported alongside.
    """
    model = model or build_default_penetrance()
    fams = [scenario_family(s) for s in SCENARIOS]
    alone = fams[0].subset([0])
    baseline = mendelian.future_risk(alone, t, model).risk
    risks = {}
    for name, m in models.items():
        if m == "mendelian":
            risks[name] = [mendelian.future_risk(p, t, model).risk for p in fams]
        else:
            risks[name] = [float(v) for v in m.predict_pedigrees(fams, seed=0)]
    rows = []
    for k, s in enumerate(SCENARIOS):
        row = {"scenario": s, "description": SCENARIO_TEXT[s]}
        row.update({name: float(risks[name][k]) for name in models})
        rows.append(row)
    for row in rows:
        row["mendelian_counselee_only"] = float(baseline)
    if "logistic" in models:
        rows[-1]["logistic_e_minus_d"] = rows[4]["logistic"] - rows[3]["logistic"]
    return rows


# ---- the experiment ------------------------------------------------------------

class _Clock:
    def __init__(self):
        self.stages = {}

    def run(self, stage, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*a, **kw)
        except ExperimentError:
            raise
        except Exception as exc:
            raise ExperimentError(stage, f"{type(exc).__name__}: {exc}") from exc
        self.stages[stage] = self.stages.get(stage, 0.0) + time.perf_counter() - t0
        return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _round(x, nd=10):
    """Trim float noise so reruns compare byte for byte."""
    if isinstance(x, float):
        return round(x, nd)
    if isinstance(x, dict):
        return {k: _round(v, nd) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v, nd) for v in x]
    return x


def run_experiment(config: ExperimentConfig, bench: bool = False) -> dict:
    """Run every stage and write artifacts to ``config.out_dir``.

    Returns a dict with the in-memory results (curves, reports, scenario
    rows, deciles, validation selection logs, test-set predictions and
    outcomes and, when ``bench`` is
    set, wall-clock seconds per stage).
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clock = _Clock()
    tag = {"config_hash": config.digest(), "seed": config.seed}
    model = config.penetrance_model()
    structure = config.structure_distribution()
    ref = ReferenceStructure.preset(config.reference)
    t = config.horizon
    nets = [k for k in config.models if k in NN_KINDS]
    n_max = max(config.train_sizes) if nets else 0
    s_train, s_test = derive_seed(config.seed, "train"), derive_seed(config.seed, "test")
    s_enc_tr, s_enc_te = derive_seed(config.seed, "encode:train"), derive_seed(config.seed, "encode:test")

    test = clock.run("simulate_test", simulate_cohort, config.test_size, structure, model, s_test, t,
                     config.workers, "TE")
    train_c = None
    if nets:
        train_c = clock.run("simulate_train", simulate_cohort, n_max, structure, model, s_train, t,
                            config.workers, "TR")
    y = test.y0
    m_risk = score_mendelian(test.pedigrees, model, t, config.workers, "score_test")

    preds = {"mendelian": m_risk}
    curves = []
    selection = []
    fitted = {}
    if nets:
        Xtr = clock.run("encode_train", encode_cohort, train_c.pedigrees, ref, s_enc_tr)
        Xte = clock.run("encode_test", encode_cohort, test.pedigrees, ref, s_enc_te)
        m_auc = auc(m_risk, y)
        for n in config.train_sizes:
            for kind in nets:
                spec, sel = clock.run(f"select_{kind}_{n}", select_spec, config, kind, Xtr[:n], train_c.y0[:n])
                fm = clock.run(f"train_{kind}_{n}", fit_network, spec, train_c.pedigrees[:n],
                               train_c.y0[:n], ref, s_enc_tr, Xtr[:n])
                p = predict(fm.params, fm.scaler.transform(Xte))
                curves.append({"model": kind, "n_train": n, "auc": auc(p, y),
                               "rho": correlation(p, m_risk), "mendelian_auc": m_auc,
                               **{f: getattr(spec, f) for f in config.grids().get(kind, {})}, **tag})
                if sel:
                    selection.append({"model": kind, "n_train": n, "block": "clean", "candidates": sel})
                if n == n_max:
                    fitted[kind] = fm
                    preds[kind] = p

    report = clock.run("bootstrap_clean", bootstrap, preds, y, None, config.n_boot,
                       derive_seed(config.seed, "boot:clean"), "mendelian")
    deciles = {"clean": {k: calibration_deciles(v, y) for k, v in preds.items()}}
    reports = {"clean": report.to_dict()}

    sensitivity = []
    for loss in config.extra_losses:
        for kind in nets:
            if kind == "logistic" and loss == "mse":
                continue
            spec, sel = clock.run(f"select_{kind}_{loss}", select_spec, config, kind, Xtr, train_c.y0, loss=loss)
            if sel:
                selection.append({"model": kind, "n_train": n_max, "block": f"loss={loss}", "candidates": sel})
            fm = clock.run(f"train_{kind}_{loss}", fit_network, spec, train_c.pedigrees, train_c.y0, ref,
                           s_enc_tr, Xtr)
            p = predict(fm.params, fm.scaler.transform(Xte))
            sensitivity.append({"model": kind, "variant": f"loss={loss}", "n_train": n_max,
                                "auc": auc(p, y), "base_auc": auc(preds[kind], y), **tag})
    if config.extra_references and "cnn" in nets:
        base_loss = summarize_loss(train_c.pedigrees, ref)
        for name in config.extra_references:
            alt = ReferenceStructure.preset(name)
            fm = clock.run(f"train_cnn_{name}", fit_network, config.spec_for("cnn"), train_c.pedigrees,
                           train_c.y0, alt, s_enc_tr)
            p = fm.predict_pedigrees(test.pedigrees, s_enc_te)
            sensitivity.append({"model": "cnn", "variant": f"reference={name}", "n_train": n_max,
                                "auc": auc(p, y), "base_auc": auc(preds["cnn"], y),
                                "dropped_fraction": summarize_loss(train_c.pedigrees, alt),
                                "base_dropped_fraction": base_loss, **tag})

    if config.misreport is not None:
        mcfg = MisreportConfig.from_dict(config.misreport)
        test_m = clock.run("perturb_test", perturb_cohort, test.pedigrees, mcfg,
                           derive_seed(config.seed, "misreport:test"))
        preds_m = {"mendelian": score_mendelian(test_m, model, t, config.workers, "score_misreported")}
        if nets:
            train_m = train_c.pedigrees
            if config.misreport_train:
                train_m = clock.run("perturb_train", perturb_cohort, train_c.pedigrees, mcfg,
                                    derive_seed(config.seed, "misreport:train"))
            Xtr_m = encode_cohort(train_m, ref, s_enc_tr)
            Xte_m = encode_cohort(test_m, ref, s_enc_te)
            for kind in nets:
                spec, sel = clock.run(f"select_{kind}_misreported", select_spec, config, kind, Xtr_m, train_c.y0)
                if sel:
                    selection.append({"model": kind, "n_train": n_max, "block": "misreported", "candidates": sel})
                fm = clock.run(f"train_{kind}_misreported", fit_network, spec, train_m, train_c.y0, ref,
                               s_enc_tr, Xtr_m)
                preds_m[kind] = predict(fm.params, fm.scaler.transform(Xte_m))
        rep_m = clock.run("bootstrap_misreported", bootstrap, preds_m, y, None, config.n_boot,
                          derive_seed(config.seed, "boot:misreported"), "mendelian")
        reports["misreported"] = rep_m.to_dict()
        reports["misreported"]["clean_mendelian"] = metrics(m_risk, y)
        deciles["misreported"] = {k: calibration_deciles(v, y) for k, v in preds_m.items()}

    scen_models = {"mendelian": "mendelian", **fitted}
    scenarios = clock.run("scenarios", scenario_table, scen_models, model, t)

    result = {"tag": tag, "curves": curves, "reports": reports, "scenarios": scenarios,
              "deciles": deciles, "sensitivity": sensitivity, "selection": selection,
              "predictions": {"clean": preds}, "y": y}
    if config.misreport is not None:
        result["predictions"]["misreported"] = preds_m
    _write_json(out / "config.json", {**tag, "config": config.to_dict()})
    _write_json(out / "curves.json", _round({**tag, "rows": curves}))
    _write_csv(out / "curves.csv", _round(curves))
    _write_json(out / "report.json", _round({**tag, **reports}))
    _write_csv(out / "performance.csv", _round(_performance_rows(reports, tag)))
    _write_json(out / "scenarios.json", _round({**tag, "rows": scenarios}))
    _write_csv(out / "scenarios.csv", _round([{**r, **tag} for r in scenarios]))
    _write_json(out / "deciles.json", _round({**tag, **deciles}))
    if sensitivity:
        _write_json(out / "sensitivity.json", _round({**tag, "rows": sensitivity}))
    if selection:
        _write_json(out / "selection.json", _round({**tag, "rows": selection}))
    if bench:
        result["bench"] = {k: round(v, 3) for k, v in clock.stages.items()}
        _write_json(out / "bench.json", {**tag, "seconds": result["bench"]})
    return result


def _performance_rows(reports, tag):
    rows = []
    for block, rep in reports.items():
        for m in rep["models"]:
            row = {"block": block, "model": m, **tag}
            for k, v in rep["performance"][m].items():
                row[k] = v
                ci = rep["ci"][m].get(k)
                if ci is not None:
                    row[f"{k}_lo"], row[f"{k}_hi"] = ci
            row["rho"] = rep["correlation"].get(m)
            rows.append(row)
    return rows

