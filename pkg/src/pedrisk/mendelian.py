"""Mendelian carrier posteriors, t-year risk, and recalibration."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .genetics import (BREAST, N_CLASSES, N_STATES, STATE_CLASS, TRANSMISSION,
                       PenetranceModel, pedigree_class_likelihoods)
from .pedigree import MAX_AGE, Pedigree, RelativeType
from .peeling import PedigreeLoopError, compile_program, run_program, with_placeholders

__all__ = [
    "CarrierPosterior", "RiskPrediction", "PedigreeLoopError", "FamilyTooLargeError",
    "collapse_states", "state_likelihoods", "state_posterior_peeling", "carrier_posterior_peeling",
    "brute_force_posterior", "interval_risk", "future_risk", "score_cohort",
    "recalibrate_fit", "recalibrate_apply", "RR_LADDER", "affected_first_degree", "reference_risks",
]


class FamilyTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class CarrierPosterior:
    probs: np.ndarray  # (noncarrier, locus1, locus2, both)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True)
class RiskPrediction:
    counselee_id: int
    horizon: int
    risk: float


def collapse_states(v9: np.ndarray) -> np.ndarray:
    """Sum a (..., 9) state vector into the 4 carrier classes."""
    out = np.zeros(v9.shape[:-1] + (N_CLASSES,))
    for s in range(N_STATES):
        out[..., STATE_CLASS[s]] += v9[..., s]
    return out


def state_likelihoods(p: Pedigree, model: PenetranceModel) -> np.ndarray:
    return pedigree_class_likelihoods(p, model)[:, STATE_CLASS]


def _normalize(v, family_id):
    total = v.sum()
    if not np.isfinite(total) or total <= 0:
        raise FloatingPointError(f"family {family_id}: phenotype data has zero probability under the model")
    return v / total


def state_posterior_peeling(p: Pedigree, model: PenetranceModel, use_numba=None) -> np.ndarray:
    prog = compile_program(p)
    v = run_program(prog, state_likelihoods(p, model), model.prior, use_numba=use_numba)
    return _normalize(v, p.family_id)


def carrier_posterior_peeling(p: Pedigree, model: PenetranceModel, use_numba=None) -> CarrierPosterior:
    """P(counselee carrier class | family history) by peeling.

    Raises :class:`PedigreeLoopError` for looped pedigrees.
    """
    return CarrierPosterior(collapse_states(state_posterior_peeling(p, model, use_numba)))


def brute_force_posterior(p: Pedigree, model: PenetranceModel, max_members: int = 10,
                          max_rows: int = 20_000_000) -> CarrierPosterior:
    """Exact posterior by summing over joint genotype assignments.

    Members are assigned with parents before children. Assignments with
    zero transmission probability are dropped as they are generated, and a
    member is summed out (rows merged on the remaining columns) once all of
    its children are assigned. The result is the full sum, evaluated
    without any message schedule.
    """
    if len(p) > max_members:
        raise FamilyTooLargeError(f"family {p.family_id}: {len(p)} members exceeds {max_members}")
    st = with_placeholders(p)
    n = len(st.sex)
    lik = np.ones((n, N_STATES))
    lik[:len(p)] = state_likelihoods(p, model)
    prior = model.prior

    # sibships generation by generation; founders enter just before their first child
    depth = {}

    def depth_of(i, seen=()):
        if i not in depth:
            if i in seen:
                raise ValueError(f"family {p.family_id}: parent links are cyclic")
            pars = [int(x) for x in (st.mother[i], st.father[i]) if x >= 0]
            depth[i] = 1 + max((depth_of(x, seen + (i,)) for x in pars), default=-1)
        return depth[i]

    order, placed = [], set()

    def place(i):
        if i not in placed:
            for par in (int(st.mother[i]), int(st.father[i])):
                if par >= 0:
                    place(par)
            order.append(i)
            placed.add(i)

    kids = [i for i in range(n) if st.mother[i] >= 0]
    for i in sorted(kids, key=lambda i: (depth_of(i), int(st.mother[i]), int(st.father[i]), i)):
        place(i)
    for i in range(n):
        place(i)
    pos = {i: k for k, i in enumerate(order)}
    last_use = {i: pos[i] for i in order}
    for c in order:
        for par in (int(st.mother[c]), int(st.father[c])):
            if par >= 0:
                last_use[par] = max(last_use[par], pos[c])

    cols = []
    G = np.zeros((1, 0), dtype=np.int64)
    w = np.ones(1)
    states = np.arange(N_STATES)
    for step, i in enumerate(order):
        mo, fa = int(st.mother[i]), int(st.father[i])
        if mo < 0:
            factor = np.broadcast_to(prior * lik[i], (len(w), N_STATES))
        else:
            factor = TRANSMISSION[:, G[:, cols.index(mo)], G[:, cols.index(fa)]].T * lik[i]
        rows, child = np.nonzero(factor)
        if len(rows) > max_rows:
            raise FamilyTooLargeError(f"family {p.family_id}: enumeration exceeds {max_rows} assignments")
        w = w[rows] * factor[rows, child]
        G = np.concatenate([G[rows], states[child][:, None]], axis=1)
        cols.append(i)
        keep = [k for k, j in enumerate(cols) if j == 0 or last_use[j] > step]
        if len(keep) < len(cols):
            cols = [cols[k] for k in keep]
            G = G[:, keep]
            key = G @ (N_STATES ** np.arange(G.shape[1], dtype=np.int64))
            uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
            w = np.bincount(inv, weights=w, minlength=len(uniq))
            G = G[first]
    post9 = np.bincount(G[:, cols.index(0)], weights=w, minlength=N_STATES)
    return CarrierPosterior(collapse_states(_normalize(post9, p.family_id)))


def interval_risk(model: PenetranceModel, sex: int, age: int, t: int, cancer: int = BREAST) -> np.ndarray:
    """Per-class P(onset in (age, age+t] | no onset by age); horizon clipped at 94."""
    if not 0 <= age < MAX_AGE:
        raise ValueError(f"baseline age {age} outside [0, {MAX_AGE})")
    if t < 0:
        raise ValueError("horizon must be nonnegative")
    end = min(age + t, MAX_AGE)
    cum = model.cumulative[:, sex, cancer]
    surv = 1.0 - cum[:, age]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(surv > 0, (cum[:, end] - cum[:, age]) / surv, 1.0)
    return np.clip(r, 0.0, 1.0)


def _check_counselee(p: Pedigree):
    if p.bc_status[0] == 1:
        raise ValueError(f"family {p.family_id}: counselee already has breast cancer")
    a0 = int(p.current_age[0])
    if a0 < 0:
        raise ValueError(f"family {p.family_id}: counselee age is missing")
    if a0 >= MAX_AGE:
        raise ValueError(f"family {p.family_id}: counselee age {a0} leaves no horizon")
    return a0


def future_risk(p: Pedigree, t: int, model: PenetranceModel, posterior=None) -> RiskPrediction:
    """Counselee's t-year breast cancer risk: posterior mixture of class risks."""
    a0 = _check_counselee(p)
    if posterior is None:
        posterior = carrier_posterior_peeling(p, model)
    post = np.asarray(posterior, dtype=float)
    risk = float(np.clip(post @ interval_risk(model, int(p.sex[0]), a0, t), 0.0, 1.0))
    return RiskPrediction(int(p.ids[0]), int(t), risk)


def _score_chunk(args):
    pedigrees, model, t = args
    post = np.empty((len(pedigrees), N_CLASSES))
    risk = np.empty(len(pedigrees))
    for j, p in enumerate(pedigrees):
        post[j] = carrier_posterior_peeling(p, model).probs
        risk[j] = future_risk(p, t, model, posterior=post[j]).risk
    return post, risk


def score_cohort(pedigrees, model: PenetranceModel, t: int = 10, workers: int = 1):
    """Posteriors ``(n, 4)`` and t-year risks ``(n,)`` for a list of families.

    Results do not depend on ``workers``; families are scored independently.
    """
    pedigrees = list(pedigrees)
    if workers <= 1 or len(pedigrees) < 2 * workers:
        return _score_chunk((pedigrees, model, t))
    bounds = np.linspace(0, len(pedigrees), workers * 4 + 1).astype(int)
    chunks = [(pedigrees[a:b], model, t) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_score_chunk, chunks))
    return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])


# ---- recalibration -----------------------------------------------------

def recalibrate_fit(predictions, reference_risks) -> tuple:
    """OLS of reference risk on prediction; returns ``(slope, intercept)``."""
    x = np.asarray(predictions, dtype=float)
    y = np.asarray(reference_risks, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("predictions and reference risks must be 1-d and the same length")
    if len(np.unique(x)) < 2:
        raise ValueError("recalibration needs at least two distinct predictions")
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    return slope, float(y.mean() - slope * x.mean())


def recalibrate_apply(predictions, slope: float, intercept: float) -> np.ndarray:
    return np.clip(slope * np.asarray(predictions, dtype=float) + intercept, 0.0, 1.0)


# relative risk by number of affected first-degree relatives (3 means 3 or more)
RR_LADDER = {0: 1.0, 1: 1.8, 2: 2.9, 3: 3.9}

_FIRST_DEGREE = {RelativeType.MOTHER, RelativeType.FATHER, RelativeType.SISTER,
                 RelativeType.BROTHER, RelativeType.DAUGHTER, RelativeType.SON}


def affected_first_degree(p: Pedigree, cancer: int = BREAST) -> int:
    status = p.bc_status if cancer == BREAST else p.oc_status
    types = p.relative_types
    return int(sum(1 for r in range(1, len(p)) if status[r] == 1 and RelativeType(types[r]) in _FIRST_DEGREE))


def reference_risks(pedigrees, t: int, model: PenetranceModel, base_table=None, rr=None) -> np.ndarray:
    """Age-specific baseline risk times a family-history relative risk.

    ``base_table`` maps baseline age to t-year risk; by default it is the
    population-average interval risk implied by ``model`` and its founder
    prior.
    """
    rr = RR_LADDER if rr is None else rr
    top = max(rr)
    prior_cls = collapse_states(model.prior)
    out = []
    for p in pedigrees:
        a0 = _check_counselee(p)
        if base_table is None:
            base = float(prior_cls @ interval_risk(model, int(p.sex[0]), a0, t))
        else:
            base = float(base_table[a0])
        k = min(affected_first_degree(p), top)
        out.append(min(1.0, base * rr[k]))
    return np.array(out)
