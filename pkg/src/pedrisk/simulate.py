"""Synthetic cohorts from the two-locus dominant generating model.

Each family gets its own generator ``default_rng([seed, index])`` so that
results do not depend on how families are split across workers.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .genetics import BREAST, OVARIAN, STATE_CLASS, PenetranceModel, build_default_penetrance
from .pedigree import FEMALE, MALE, MAX_AGE, Pedigree, RelativeType

NEVER = MAX_AGE + 1  # latent onset beyond the table support

# relative types with random counts, the (parent couple, sex) they hang off
_VARIABLE_TYPES = (
    RelativeType.MATERNAL_AUNT, RelativeType.MATERNAL_UNCLE,
    RelativeType.PATERNAL_AUNT, RelativeType.PATERNAL_UNCLE,
    RelativeType.SISTER, RelativeType.BROTHER,
    RelativeType.DAUGHTER, RelativeType.SON,
)

_DEFAULT_MEANS = {
    RelativeType.MATERNAL_AUNT: 1.8, RelativeType.MATERNAL_UNCLE: 1.8,
    RelativeType.PATERNAL_AUNT: 1.8, RelativeType.PATERNAL_UNCLE: 1.8,
    RelativeType.SISTER: 1.2, RelativeType.BROTHER: 1.2,
    RelativeType.DAUGHTER: 1.2, RelativeType.SON: 1.2,
}


def truncated_poisson(mean: float, cap: int = 5) -> np.ndarray:
    k = np.arange(cap + 1)
    logp = k * np.log(mean) - mean - np.array([np.sum(np.log(np.arange(1, j + 1))) for j in k])
    p = np.exp(logp)
    return p / p.sum()


@dataclass(frozen=True)
class StructureDistribution:
    """Count tables per relative type plus the counselee baseline-age law.

    Grandparents and parents are always present.
    """

    counts: dict = field(default_factory=lambda: {q: truncated_poisson(m) for q, m in _DEFAULT_MEANS.items()})
    baseline_mean: float = 47.0
    baseline_sd: float = 14.0
    baseline_min: int = 18
    baseline_max: int = 84
    cap: int = 5

    def __post_init__(self):
        counts = {}
        for q in _VARIABLE_TYPES:
            p = np.asarray(self.counts.get(q, [1.0]), dtype=float)
            if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1) > 1e-9:
                raise ValueError(f"count distribution for {q.label} must be a probability vector")
            if len(p) > self.cap + 1:
                raise ValueError(f"count distribution for {q.label} exceeds the cap of {self.cap}")
            p.flags.writeable = False
            counts[q] = p
        object.__setattr__(self, "counts", counts)
        if not 0 <= self.baseline_min <= self.baseline_max < MAX_AGE:
            raise ValueError("baseline age bounds must satisfy 0 <= min <= max < 94")

    @classmethod
    def poisson(cls, means: dict, cap: int = 5, **kw) -> "StructureDistribution":
        return cls(counts={RelativeType(q) if not isinstance(q, str) else RelativeType.from_label(q):
                           truncated_poisson(m, cap) for q, m in means.items()}, cap=cap, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "StructureDistribution":
        kw = {k: d[k] for k in ("baseline_mean", "baseline_sd", "baseline_min", "baseline_max", "cap") if k in d}
        if "means" in d:
            return cls.poisson(d["means"], **kw)
        counts = {RelativeType.from_label(k): v for k, v in d.get("counts", {}).items()}
        return cls(counts=counts, **kw)

    @classmethod
    def from_file(cls, path) -> "StructureDistribution":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"counts": {q.label: self.counts[q].tolist() for q in _VARIABLE_TYPES},
                "baseline_mean": self.baseline_mean, "baseline_sd": self.baseline_sd,
                "baseline_min": self.baseline_min, "baseline_max": self.baseline_max, "cap": self.cap}

    def sample(self, rng) -> dict:
        u = rng.random(len(_VARIABLE_TYPES))
        return {q: int(np.searchsorted(np.cumsum(self.counts[q]), u[j], side="right").clip(max=len(self.counts[q]) - 1))
                for j, q in enumerate(_VARIABLE_TYPES)}


def truncnorm(rng, mean, sd, lo, hi, size=None):
    """Normal draws restricted to [lo, hi] by rejection."""
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(n)
    filled = 0
    while filled < n:
        x = rng.normal(mean, sd, size=2 * (n - filled) + 4)
        x = x[(x >= lo) & (x <= hi)][: n - filled]
        out[filled:filled + len(x)] = x
        filled += len(x)
    return out[0] if size is None else out.reshape(size)


def sample_onset_ages(rng, model: PenetranceModel, cls, sex, cancer: int) -> np.ndarray:
    """Latent onset ages from the class tables; ``NEVER`` when no onset by 94."""
    cls = np.asarray(cls, dtype=np.int64)
    sex = np.asarray(sex, dtype=np.int64)
    cum = model.cumulative[cls, sex, cancer, 1:]
    u = rng.random(len(cls))
    return (u[:, None] >= cum).sum(axis=1) + 1


@dataclass
class Family:
    pedigree: Pedigree
    y0: int
    counselee_class: int
    latent: Optional[dict] = None


def _transmit(rng, mom, dad, k):
    """Allele counts (k, 2) for k children of parents with counts ``mom``, ``dad``."""
    u = rng.random((k, 2, 2))
    return (u[:, 0] < mom / 2).astype(np.int64) + (u[:, 1] < dad / 2)


def _draw(rng, structure: StructureDistribution, model: PenetranceModel):
    a0 = int(round(truncnorm(rng, structure.baseline_mean, structure.baseline_sd,
                             structure.baseline_min, structure.baseline_max)))
    counts = structure.sample(rng)
    gm, gs = model.gap_mean, model.gap_sd

    def gaps(k):
        return np.rint(truncnorm(rng, gm, gs, 14, 50, size=k)).astype(np.int64)

    g = gaps(6)
    # counselee, mother, father, MGM, MGF, PGM, PGF
    sex = [FEMALE, FEMALE, MALE, FEMALE, MALE, FEMALE, MALE]
    mother = [1, 3, 5, -1, -1, -1, -1]
    father = [2, 4, 6, -1, -1, -1, -1]
    age = [a0, a0 + g[0], a0 + g[1], 0, 0, 0, 0]
    age[3], age[4] = age[1] + g[2], age[1] + g[3]
    age[5], age[6] = age[2] + g[4], age[2] + g[5]
    groups = [
        (RelativeType.MATERNAL_AUNT, FEMALE, 3, 4), (RelativeType.MATERNAL_UNCLE, MALE, 3, 4),
        (RelativeType.PATERNAL_AUNT, FEMALE, 5, 6), (RelativeType.PATERNAL_UNCLE, MALE, 5, 6),
        (RelativeType.SISTER, FEMALE, 1, 2), (RelativeType.BROTHER, MALE, 1, 2),
        (RelativeType.DAUGHTER, FEMALE, 0, -1), (RelativeType.SON, MALE, 0, -1),
    ]
    for q, s, mo, fa in groups:
        k = counts[q]
        if not k:
            continue
        for child_age in age[mo] - gaps(k):
            if child_age >= 0:
                sex.append(s)
                mother.append(mo)
                father.append(fa)
                age.append(int(child_age))
    n = len(sex)
    sex = np.array(sex, dtype=np.int64)
    mother = np.array(mother, dtype=np.int64)
    father = np.array(father, dtype=np.int64)
    age_b = np.array(age, dtype=np.int64)

    # allele counts per locus; founders first, then by generation
    f = np.array(model.allele_freqs)
    geno = np.zeros((n, 2), dtype=np.int64)
    founders = [3, 4, 5, 6]
    geno[founders] = rng.binomial(2, f, size=(4, 2))
    spouse = rng.binomial(2, f, size=2)
    for kid, mo, fa in ((1, 3, 4), (2, 5, 6)):
        geno[kid] = _transmit(rng, geno[mo], geno[fa], 1)[0]
    for couple in ((3, 4), (5, 6), (1, 2)):
        kids = np.flatnonzero((mother == couple[0]) & (father == couple[1]))
        kids = kids[(kids != 1) & (kids != 2)]
        if len(kids):
            geno[kids] = _transmit(rng, geno[couple[0]], geno[couple[1]], len(kids))
    kids = np.flatnonzero(mother == 0)
    if len(kids):
        geno[kids] = _transmit(rng, geno[0], spouse, len(kids))
    state = 3 * geno[:, 0] + geno[:, 1]
    cls = STATE_CLASS[state]

    bc = sample_onset_ages(rng, model, cls, sex, BREAST)
    oc = sample_onset_ages(rng, model, cls, sex, OVARIAN)
    death = np.floor(truncnorm(rng, model.death_mean, model.death_sd, 1, 110, size=n)).astype(np.int64)
    return a0, sex, mother, father, age_b, state, cls, bc, oc, death


def simulate_family(rng, structure: StructureDistribution | None = None, model: PenetranceModel | None = None,
                    t: int = 10, family_id: str = "0", keep_latent: bool = False) -> Family:
    """One family, redrawn until the counselee is alive and free of breast cancer at baseline."""
    structure = structure or StructureDistribution()
    model = model or build_default_penetrance()
    while True:
        a0, sex, mother, father, age_b, state, cls, bc, oc, death = _draw(rng, structure, model)
        if death[0] >= a0 and bc[0] > a0:
            break
    deceased = death < age_b
    obs_age = np.minimum(np.minimum(age_b, death), MAX_AGE)
    bc_aff = bc <= obs_age
    oc_aff = oc <= obs_age
    ped = Pedigree(
        ids=np.arange(len(sex)), mother=mother, father=father, sex=sex, current_age=obs_age,
        deceased=deceased, bc_status=bc_aff.astype(np.int64), oc_status=oc_aff.astype(np.int64),
        bc_onset_age=np.where(bc_aff, bc, 0), oc_onset_age=np.where(oc_aff, oc, 0), family_id=family_id,
    )
    y0 = int(a0 < bc[0] <= a0 + t)
    latent = None
    if keep_latent:
        latent = {"state": state, "carrier_class": cls, "bc_onset": bc, "oc_onset": oc,
                  "death_age": death, "age_at_baseline": age_b}
    return Family(ped, y0, int(cls[0]), latent)


@dataclass
class Cohort:
    pedigrees: list
    y0: np.ndarray
    counselee_class: np.ndarray
    latent: Optional[list] = None

    def __len__(self):
        return len(self.pedigrees)

    def __iter__(self):
        return iter(zip(self.pedigrees, self.y0.tolist()))

    @property
    def family_ids(self):
        return [p.family_id for p in self.pedigrees]


def _simulate_range(args):
    lo, hi, seed, structure, model, t, prefix, keep_latent = args
    fams = [simulate_family(np.random.default_rng([seed, i]), structure, model, t,
                            f"{prefix}{i}", keep_latent) for i in range(lo, hi)]
    return fams


def simulate_cohort(n: int, structure: StructureDistribution | None = None, model: PenetranceModel | None = None,
                    seed: int = 0, t: int = 10, workers: int = 1, prefix: str = "F",
                    keep_latent: bool = False) -> Cohort:
    """``n`` families; family ``i`` is drawn from ``default_rng([seed, i])``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    structure = structure or StructureDistribution()
    model = model or build_default_penetrance()
    if workers <= 1 or n < 4 * workers:
        fams = _simulate_range((0, n, seed, structure, model, t, prefix, keep_latent))
    else:
        bounds = np.linspace(0, n, 4 * workers + 1).astype(int)
        jobs = [(a, b, seed, structure, model, t, prefix, keep_latent) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            fams = [f for part in ex.map(_simulate_range, jobs) for f in part]
    return Cohort(
        pedigrees=[f.pedigree for f in fams],
        y0=np.array([f.y0 for f in fams], dtype=np.int64),
        counselee_class=np.array([f.counselee_class for f in fams], dtype=np.int64),
        latent=[f.latent for f in fams] if keep_latent else None,
    )
