"""Discrimination and calibration metrics, bootstrap comparisons, censoring weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

METRICS = ("oe", "auc", "pr_auc", "brier_sqrt")
HIGHER_IS_BETTER = {"auc": True, "pr_auc": True, "brier_sqrt": False}


def _prep(pred, y, w):
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(pred) if w is None else np.asarray(w, dtype=float)
    if not (pred.shape == y.shape == w.shape) or pred.ndim != 1:
        raise ValueError("predictions, labels and weights must be 1-d and the same length")
    return pred, y, w


def _tie_groups(sorted_scores):
    """Start index of each run of equal values, plus the end sentinel."""
    brk = np.flatnonzero(np.diff(sorted_scores)) + 1
    return np.concatenate([[0], brk, [len(sorted_scores)]])


def auc(pred, y, w=None):
    """Weighted Mann-Whitney AUC, tied scores count one half; ``None`` without both classes."""
    pred, y, w = _prep(pred, y, w)
    wp, wn = w * y, w * (1 - y)
    P, N = wp.sum(), wn.sum()
    if P <= 0 or N <= 0:
        return None
    order = np.argsort(pred, kind="stable")
    bounds = _tie_groups(pred[order])
    gp = np.add.reduceat(wp[order], bounds[:-1]) if len(pred) else np.zeros(0)
    gn = np.add.reduceat(wn[order], bounds[:-1]) if len(pred) else np.zeros(0)
    below = np.cumsum(gn) - gn
    return float(np.sum(gp * (below + 0.5 * gn)) / (P * N))


def average_precision(pred, y, w=None):
    """Step-wise area under the precision-recall curve; tied scores form one threshold."""
    pred, y, w = _prep(pred, y, w)
    wp, wn = w * y, w * (1 - y)
    P = wp.sum()
    if P <= 0:
        return None
    order = np.argsort(-pred, kind="stable")
    bounds = _tie_groups(pred[order])
    tp = np.cumsum(np.add.reduceat(wp[order], bounds[:-1]))
    fp = np.cumsum(np.add.reduceat(wn[order], bounds[:-1]))
    prec = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    d_recall = np.diff(np.concatenate([[0.0], tp])) / P
    return float(np.sum(d_recall * prec))


def brier(pred, y, w=None):
    pred, y, w = _prep(pred, y, w)
    if w.sum() <= 0:
        return None
    return float(np.sum(w * (pred - y) ** 2) / w.sum())


def observed_expected(pred, y, w=None):
    pred, y, w = _prep(pred, y, w)
    e = np.sum(w * pred)
    return None if e <= 0 else float(np.sum(w * y) / e)


def metrics(pred, y, w=None) -> dict:
    """``oe``, ``auc``, ``pr_auc``, ``brier`` and ``brier_sqrt``; undefined values are ``None``."""
    pred, y, w = _prep(pred, y, w)
    if ((pred < 0) | (pred > 1)).any():
        raise ValueError("predictions must lie in [0, 1]")
    b = brier(pred, y, w)
    return {"oe": observed_expected(pred, y, w), "auc": auc(pred, y, w),
            "pr_auc": average_precision(pred, y, w), "brier": b,
            "brier_sqrt": None if b is None else float(np.sqrt(b))}


def correlation(a, b, method: str = "pearson") -> float:
    if method == "pearson":
        return float(np.corrcoef(a, b)[0, 1])
    if method == "spearman":
        return float(stats.spearmanr(a, b)[0])
    raise ValueError(f"unknown correlation method {method!r}")


def _better(metric, a, b):
    """+1 if ``a`` beats ``b``, -1 if it loses, 0 on a tie or missing value."""
    if a is None or b is None:
        return 0
    if metric == "oe":
        a, b = -abs(a - 1.0), -abs(b - 1.0)
    elif not HIGHER_IS_BETTER[metric]:
        a, b = -a, -b
    return int(a > b) - int(a < b)


@dataclass
class EvalReport:
    models: list
    point: dict                 # model -> metric -> value
    ci: dict                    # model -> metric -> (lo, hi)
    wins: dict                  # metric -> (A, B) -> share of replicates A beat B
    ties: dict                  # metric -> (A, B) -> share of tied replicates
    n_boot: int
    correlation: dict = field(default_factory=dict)   # model -> rho with the reference model
    reference: str | None = None
    calibration: dict = field(default_factory=dict)
    notes: dict = field(default_factory=lambda: {
        "oe_comparison": "A beats B on O/E when |O/E - 1| is smaller"})

    def to_dict(self) -> dict:
        return {
            "models": self.models, "n_boot": self.n_boot, "reference": self.reference,
            "performance": {m: {k: self.point[m][k] for k in self.point[m]} for m in self.models},
            "ci": {m: {k: list(v) if v is not None else None for k, v in self.ci[m].items()} for m in self.models},
            "correlation": self.correlation,
            "comparisons": {metric: {f"{a}>{b}": v for (a, b), v in table.items()}
                            for metric, table in self.wins.items()},
            "ties": {metric: {f"{a}={b}": v for (a, b), v in table.items()} for metric, table in self.ties.items()},
            "calibration": self.calibration, "notes": self.notes,
        }


def bootstrap(predictions: dict, y, w=None, B: int = 1000, seed: int = 0, reference: str | None = None,
              corr_method: str = "pearson") -> EvalReport:
    """Percentile CIs and pairwise win shares over ``B`` shared resamples.

    Every model is scored on the same resampled indices within a replicate.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    names = list(predictions)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    preds = {k: np.asarray(v, dtype=float) for k, v in predictions.items()}
    point = {k: metrics(preds[k], y, w) for k in names}
    rng = np.random.default_rng(seed)
    n = len(y)
    reps = {k: {m: [] for m in METRICS} for k in names}
    wins = {m: {(a, b): 0 for a in names for b in names if a != b} for m in METRICS}
    ties = {m: {(a, b): 0 for a in names for b in names if a != b} for m in METRICS}
    for _ in range(B):
        idx = rng.integers(0, n, size=n)
        cur = {k: metrics(preds[k][idx], y[idx], w[idx]) for k in names}
        for k in names:
            for m in METRICS:
                reps[k][m].append(cur[k][m])
        for m in METRICS:
            for (a, b) in wins[m]:
                r = _better(m, cur[a][m], cur[b][m])
                wins[m][(a, b)] += r > 0
                ties[m][(a, b)] += r == 0
    ci = {}
    for k in names:
        ci[k] = {}
        for m in METRICS:
            vals = np.array([v for v in reps[k][m] if v is not None])
            ci[k][m] = None if len(vals) == 0 else (float(np.percentile(vals, 2.5)), float(np.percentile(vals, 97.5)))
    wins = {m: {pair: c / B for pair, c in t.items()} for m, t in wins.items()}
    ties = {m: {pair: c / B for pair, c in t.items()} for m, t in ties.items()}
    rho = {}
    if reference is not None:
        for k in names:
            rho[k] = correlation(preds[k], preds[reference], corr_method)
    return EvalReport(names, point, ci, wins, ties, B, rho, reference)


def paired_win_share(pred_a, pred_b, y, metric: str = "auc", B: int = 500, seed: int = 0, w=None) -> float:
    """Share of shared resamples in which ``pred_a`` strictly beats ``pred_b``."""
    rep = bootstrap({"a": pred_a, "b": pred_b}, y, w, B=B, seed=seed)
    return rep.wins[metric][("a", "b")]


# ---- censoring ---------------------------------------------------------------

class CensoringError(ValueError):
    pass


def censoring_survival(times, censor_flags):
    """Kaplan-Meier estimate of the censoring survival function.

    Returns ``(jump_times, G)`` with ``G[k]`` the value on
    ``[jump_times[k], jump_times[k+1])``. Subjects whose event and censoring
    coincide in time count as still at risk of censoring.
    """
    t = np.asarray(times, dtype=float)
    c = np.asarray(censor_flags).astype(bool)
    jumps = np.unique(t[c])
    at_risk = np.array([(t >= s).sum() for s in jumps], dtype=float)
    d = np.array([(c & (t == s)).sum() for s in jumps], dtype=float)
    return jumps, np.cumprod(1.0 - d / at_risk)


def _G(jumps, G, s, left=False):
    """Ĝ(s), or Ĝ(s-) when ``left``."""
    k = np.searchsorted(jumps, s, side="left" if left else "right")
    return 1.0 if k == 0 else float(G[k - 1])


def ipcw_weights(followup_times, event_flags, censor_flags, horizon: float) -> np.ndarray:
    """Inverse probability of censoring weights for a fixed horizon.

    * event at ``T <= horizon``: ``1 / Ĝ(T-)``;
    * followed past the horizon without an event by then: ``1 / Ĝ(horizon)``;
    * censored before the horizon: 0 (still used to estimate Ĝ).
    """
    t = np.asarray(followup_times, dtype=float)
    e = np.asarray(event_flags).astype(bool)
    c = np.asarray(censor_flags).astype(bool)
    if (t < 0).any():
        raise ValueError("follow-up times must be nonnegative")
    if (e & c).any():
        raise ValueError("a subject cannot be both an event and censored")
    jumps, G = censoring_survival(t, c)
    w = np.zeros(len(t))
    for i in range(len(t)):
        if e[i] and t[i] <= horizon:
            g = _G(jumps, G, t[i], left=True)
        elif t[i] >= horizon and not (c[i] and t[i] < horizon):
            g = _G(jumps, G, horizon)
        else:
            continue
        if g <= 0:
            raise CensoringError(f"censoring survival is 0 at time {min(t[i], horizon)}")
        w[i] = 1.0 / g
    return w


def horizon_labels(followup_times, event_flags, horizon: float) -> np.ndarray:
    t = np.asarray(followup_times, dtype=float)
    return (np.asarray(event_flags).astype(bool) & (t <= horizon)).astype(int)


# ---- calibration ----------------------------------------------------------------

def calibration_deciles(pred, y, w=None, n_bins: int = 10) -> list:
    """Per bin of sorted risk: bounds, mean prediction, observed rate, count."""
    pred, y, w = _prep(pred, y, w)
    if len(pred) < n_bins:
        raise ValueError(f"need at least {n_bins} predictions")
    order = np.argsort(pred, kind="stable")
    rows = []
    for k, idx in enumerate(np.array_split(order, n_bins)):
        ww = w[idx]
        tot = ww.sum()
        rows.append({
            "bin": k + 1, "lower": float(pred[idx].min()), "upper": float(pred[idx].max()),
            "mean_predicted": float(np.sum(ww * pred[idx]) / tot) if tot > 0 else None,
            "observed": float(np.sum(ww * y[idx]) / tot) if tot > 0 else None,
            "count": int(len(idx)),
        })
    return rows
