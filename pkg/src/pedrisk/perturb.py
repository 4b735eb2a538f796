"""Family-history perturbations: misreporting, missing relatives, missing onset ages."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pedigree import FEMALE, MAX_AGE, MISSING, Pedigree, RelativeType

_CANCERS = ("breast", "ovarian")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class MisreportConfig:
    """Per-cancer (first degree, second degree) error rates and onset-age noise."""

    fnr: dict = field(default_factory=lambda: {"breast": (0.05, 0.18), "ovarian": (0.17, 0.56)})
    fpr: dict = field(default_factory=lambda: {"breast": (0.03, 0.03), "ovarian": (0.01, 0.02)})
    onset_fraction: dict = field(default_factory=lambda: {"breast": 0.03, "ovarian": 0.04})
    age_fraction: float = 0.03
    error_mean: float = 4.0
    error_sd: float = 3.0
    fp_min_age: int = 18

    def __post_init__(self):
        for name in ("fnr", "fpr"):
            table = getattr(self, name)
            for c in _CANCERS:
                rates = tuple(float(x) for x in table[c])
                if len(rates) != 2 or not all(0 <= r <= 1 for r in rates):
                    raise ValueError(f"{name}[{c}] must be two rates in [0, 1]")
        rates = [self.onset_fraction[c] for c in _CANCERS] + [self.age_fraction]
        if not all(0 <= r <= 1 for r in rates):
            raise ValueError("misreport fractions must lie in [0, 1]")
        if self.error_sd < 0:
            raise ValueError("error_sd must be nonnegative")

    @classmethod
    def none(cls) -> "MisreportConfig":
        zero = {c: (0.0, 0.0) for c in _CANCERS}
        return cls(fnr=zero, fpr=dict(zero), onset_fraction={c: 0.0 for c in _CANCERS}, age_fraction=0.0)

    @classmethod
    def from_dict(cls, d: dict) -> "MisreportConfig":
        base = cls().to_dict()
        base.update(d)
        return cls(**base)

    @classmethod
    def from_file(cls, path) -> "MisreportConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"fnr": {c: list(self.fnr[c]) for c in _CANCERS}, "fpr": {c: list(self.fpr[c]) for c in _CANCERS},
                "onset_fraction": dict(self.onset_fraction), "age_fraction": self.age_fraction,
                "error_mean": self.error_mean, "error_sd": self.error_sd, "fp_min_age": self.fp_min_age}


def _age_error(rng, n, cfg):
    mag = rng.normal(cfg.error_mean, cfg.error_sd, size=n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return np.rint(sign * mag).astype(np.int64)


def perturb_misreport(p: Pedigree, config: MisreportConfig | None = None, seed=0) -> Pedigree:
    """Misreport relatives' diagnoses, onset ages and current ages.

    Second-degree rates also apply to members beyond the second degree.
    False-positive onsets are uniform on ``[fp_min_age, current_age]``;
    members younger than ``fp_min_age`` or with unknown age cannot become
    false positives, and males get no ovarian false positives. The
    counselee is untouched.
    """
    cfg = config or MisreportConfig()
    rng = _rng(seed)
    n = len(p)
    deg = np.array([RelativeType(int(q)).degree or 2 for q in p.relative_types])
    second = (deg >= 2).astype(np.int64)
    rel = np.arange(n) > 0
    age = p.current_age.copy()
    top = np.where(age == MISSING, MAX_AGE, np.maximum(age, 1))
    out = {}
    for c, status, onset in (("breast", p.bc_status, p.bc_onset_age), ("ovarian", p.oc_status, p.oc_onset_age)):
        status, onset = status.copy(), onset.copy()
        u_flip, u_err = rng.random(n), rng.random(n)
        fp_onset_u = rng.random(n)
        err = _age_error(rng, n, cfg)
        fnr = np.array(cfg.fnr[c])[second]
        fpr = np.array(cfg.fpr[c])[second]
        aff = rel & (status == 1)
        erase = aff & (u_flip < fnr)
        can_fp = rel & (status == 0) & (age >= cfg.fp_min_age)
        if c == "ovarian":
            can_fp &= p.sex == FEMALE
        add = can_fp & (u_flip < fpr)
        keep = aff & ~erase
        shift = keep & (onset > 0) & (u_err < cfg.onset_fraction[c])
        onset = np.where(shift, np.clip(onset + err, 1, top), onset)
        lo = cfg.fp_min_age
        onset = np.where(add, lo + np.floor(fp_onset_u * (age - lo + 1)).astype(np.int64), onset)
        status = np.where(add, 1, np.where(erase, 0, status))
        onset = np.where(erase, 0, onset)
        out[c] = (status, onset)
    u_age = rng.random(n)
    err = _age_error(rng, n, cfg)
    floor = np.maximum(np.maximum(out["breast"][1], out["ovarian"][1]), 0)
    move = rel & (age != MISSING) & (u_age < cfg.age_fraction)
    age = np.where(move, np.clip(age + err, floor, MAX_AGE), age)
    return p.replace(current_age=age, bc_status=out["breast"][0], bc_onset_age=out["breast"][1],
                     oc_status=out["ovarian"][0], oc_onset_age=out["ovarian"][1])


def perturb_cohort(pedigrees, config: MisreportConfig | None = None, seed: int = 0) -> list:
    """Misreport every family; family ``i`` uses ``default_rng([seed, i])``."""
    return [perturb_misreport(p, config, np.random.default_rng([seed, i])) for i, p in enumerate(pedigrees)]


def drop_relatives(p: Pedigree, fraction: float, mode: str = "any", seed=0) -> Pedigree:
    """Remove ``round(fraction * eligible)`` relatives chosen uniformly.

    ``mode="unaffected_only"`` restricts the choice to members with neither
    cancer. Children of removed members lose that parent link.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    if mode not in ("any", "unaffected_only"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = _rng(seed)
    eligible = np.arange(1, len(p))
    if mode == "unaffected_only":
        eligible = eligible[(p.bc_status[eligible] == 0) & (p.oc_status[eligible] == 0)]
    k = int(round(fraction * len(eligible)))
    if k == 0:
        return p
    drop = set(rng.choice(eligible, size=k, replace=False).tolist())
    return p.subset([r for r in range(len(p)) if r not in drop])


def blank_onset_ages(p: Pedigree, fraction: float, seed=0) -> Pedigree:
    """Mark a random ``fraction`` of relatives' known onset ages as missing."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    rng = _rng(seed)
    rel = np.arange(len(p)) > 0
    bc, oc = p.bc_onset_age.copy(), p.oc_onset_age.copy()
    slots = [(bc, r) for r in np.flatnonzero(rel & (p.bc_status == 1) & (bc > 0))]
    slots += [(oc, r) for r in np.flatnonzero(rel & (p.oc_status == 1) & (oc > 0))]
    k = int(round(fraction * len(slots)))
    for j in (rng.choice(len(slots), size=k, replace=False) if k else ()):
        arr, r = slots[j]
        arr[r] = MISSING
    return p.replace(bc_onset_age=bc, oc_onset_age=oc)


def impute_onset_ages(p: Pedigree, cutoff: int = 50) -> Pedigree:
    """Fill missing onset ages: ``cutoff`` if current age exceeds it, else current age.

    An affected member whose current age is also missing gets ``cutoff``.
    """
    age = p.current_age
    fill = np.where((age == MISSING) | (age > cutoff), cutoff, age)
    bc = np.where((p.bc_status == 1) & (p.bc_onset_age == MISSING), fill, p.bc_onset_age)
    oc = np.where((p.oc_status == 1) & (p.oc_onset_age == MISSING), fill, p.oc_onset_age)
    if np.array_equal(bc, p.bc_onset_age) and np.array_equal(oc, p.oc_onset_age):
        return p
    return p.replace(bc_onset_age=bc, oc_onset_age=oc)
