"""Two-locus dominant genetic model.

Joint genotypes are encoded ``s = 3 * g1 + g2`` with ``g1, g2`` the
pathogenic-allele counts at the two loci, giving 9 states. Penetrance
depends on the genotype only through the carrier class
``(g1 >= 1) + 2 * (g2 >= 1)``: 0 noncarrier, 1 locus-1 carrier,
2 locus-2 carrier, 3 carrier at both loci.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .pedigree import FEMALE, MALE, MAX_AGE, MISSING

N_STATES = 9
N_CLASSES = 4
NONCARRIER, LOCUS1, LOCUS2, BOTH = range(4)
CLASS_NAMES = ("noncarrier", "locus1", "locus2", "both")
BREAST, OVARIAN = 0, 1

STATE_COUNTS = np.array([(s // 3, s % 3) for s in range(N_STATES)], dtype=np.int64)
STATE_CLASS = ((STATE_COUNTS[:, 0] >= 1).astype(np.int64)
               + 2 * (STATE_COUNTS[:, 1] >= 1).astype(np.int64))


def carrier_class(state: int) -> int:
    return int(STATE_CLASS[state])


@dataclass(frozen=True)
class LocusModel:
    name: str
    allele_freq: float

    def __post_init__(self):
        if not 0.0 <= self.allele_freq < 0.5:
            raise ValueError(f"allele frequency of {self.name} must lie in [0, 0.5), got {self.allele_freq}")


def hwe(f: float) -> np.ndarray:
    return np.array([(1 - f) ** 2, 2 * f * (1 - f), f * f])


def founder_prior(loci) -> np.ndarray:
    """Hardy-Weinberg prior over the 9 joint genotypes (product over loci)."""
    l1, l2 = loci
    return np.outer(hwe(l1.allele_freq), hwe(l2.allele_freq)).ravel()


def _single_locus_transmission() -> np.ndarray:
    # t[c, m, f] = P(child count c | mother count m, father count f)
    t = np.zeros((3, 3, 3))
    for m in range(3):
        for f in range(3):
            pm, pf = m / 2, f / 2
            t[0, m, f] = (1 - pm) * (1 - pf)
            t[1, m, f] = pm * (1 - pf) + (1 - pm) * pf
            t[2, m, f] = pm * pf
    return t


SINGLE_LOCUS_T = _single_locus_transmission()


def _joint_transmission() -> np.ndarray:
    t = SINGLE_LOCUS_T
    c1, c2 = STATE_COUNTS[:, 0], STATE_COUNTS[:, 1]
    return (t[c1[:, None, None], c1[None, :, None], c1[None, None, :]]
            * t[c2[:, None, None], c2[None, :, None], c2[None, None, :]])


#: TRANSMISSION[child, mother, father] over joint states.
TRANSMISSION = _joint_transmission()


def transmission_prob(child_g: int, mother_g: int, father_g: int) -> float:
    """Mendelian probability of the child's joint genotype given both parents'."""
    return float(TRANSMISSION[child_g, mother_g, father_g])


def gamete_transmission(loci) -> np.ndarray:
    """``G[child, parent]``: child genotype given one known parent, other parent random.

    The unknown parent contributes a population gamete (pathogenic with
    probability equal to the allele frequency).
    """
    prior = founder_prior(loci)
    return np.einsum("cmf,f->cm", TRANSMISSION, prior)


# ---- penetrance ----------------------------------------------------------

DEFAULT_LIFETIME = {
    "female": {"breast": [0.12, 0.65, 0.55, 0.79], "ovarian": [0.015, 0.40, 0.18, 0.45]},
    "male": {"breast": [0.001, 0.012, 0.068, 0.07], "ovarian": [0.0, 0.0, 0.0, 0.0]},
}


@dataclass(frozen=True)
class PenetranceConfig:
    allele_freqs: tuple = (0.014, 0.012)
    lifetime: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_LIFETIME)))
    shape: str = "weibull"
    median_noncarrier: float = 65.0
    median_carrier: float = 45.0
    death_mean: float = 80.0
    death_sd: float = 15.0
    gap_mean: float = 27.0
    gap_sd: float = 6.0

    @classmethod
    def from_dict(cls, d: dict) -> "PenetranceConfig":
        kw = {}
        if "allele_freqs" in d:
            kw["allele_freqs"] = tuple(float(x) for x in d["allele_freqs"])
        if "lifetime" in d:
            lt = json.loads(json.dumps(DEFAULT_LIFETIME))
            for sex, per in d["lifetime"].items():
                lt.setdefault(sex, {}).update(per)
            kw["lifetime"] = lt
        if "shape" in d:
            kw["shape"] = d["shape"]
        med = d.get("median_onset", {})
        if "noncarrier" in med:
            kw["median_noncarrier"] = float(med["noncarrier"])
        if "carrier" in med:
            kw["median_carrier"] = float(med["carrier"])
        if "death_age" in d:
            kw["death_mean"] = float(d["death_age"]["mean"])
            kw["death_sd"] = float(d["death_age"]["sd"])
        if "age_gap" in d:
            kw["gap_mean"] = float(d["age_gap"]["mean"])
            kw["gap_sd"] = float(d["age_gap"]["sd"])
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "PenetranceConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "allele_freqs": list(self.allele_freqs), "lifetime": self.lifetime, "shape": self.shape,
            "median_onset": {"noncarrier": self.median_noncarrier, "carrier": self.median_carrier},
            "death_age": {"mean": self.death_mean, "sd": self.death_sd},
            "age_gap": {"mean": self.gap_mean, "sd": self.gap_sd},
        }


def weibull_onset_table(lifetime: float, median: float, max_age: int = MAX_AGE) -> np.ndarray:
    """Annual onset probabilities at ages 1..max_age from a discretized Weibull.

    The cumulative is ``F(a) = 1 - exp(-(a/scale)**k)``; shape ``k`` and
    ``scale`` are solved so that ``F(max_age) = lifetime`` and
    ``F(median) = lifetime / 2``. Entry ``a-1`` is ``F(a) - F(a-1)``.
    """
    if lifetime < 0:
        raise ValueError(f"lifetime risk must be nonnegative, got {lifetime}")
    if lifetime >= 1:
        raise ValueError(f"lifetime risk {lifetime} is infeasible (must be < 1)")
    if not 1 < median < max_age:
        raise ValueError(f"median onset age must lie in (1, {max_age}), got {median}")
    if lifetime == 0:
        return np.zeros(max_age)
    h_end = -np.log1p(-lifetime)
    h_mid = -np.log1p(-lifetime / 2)
    k = np.log(h_end / h_mid) / np.log(max_age / median)
    scale = max_age / h_end ** (1 / k)
    ages = np.arange(0, max_age + 1, dtype=float)
    cum = -np.expm1(-((ages / scale) ** k))
    cum[-1] = lifetime
    return np.diff(cum)


@dataclass(frozen=True, eq=False)
class PenetranceModel:
    """Annual onset tables ``onset[class, sex, cancer, age-1]`` plus demography."""

    loci: tuple
    onset: np.ndarray
    death_mean: float = 80.0
    death_sd: float = 15.0
    gap_mean: float = 27.0
    gap_sd: float = 6.0
    config: Optional[PenetranceConfig] = None

    def __post_init__(self):
        onset = np.array(self.onset, dtype=float)
        if onset.shape != (N_CLASSES, 2, 2, MAX_AGE):
            raise ValueError(f"onset table has shape {onset.shape}, expected {(N_CLASSES, 2, 2, MAX_AGE)}")
        if (onset < 0).any():
            raise ValueError("onset probabilities must be nonnegative")
        if (onset.sum(axis=-1) > 1 + 1e-12).any():
            raise ValueError("onset table sums exceed 1")
        if onset[:, MALE, OVARIAN].any():
            raise ValueError("male ovarian penetrance must be zero")
        onset.flags.writeable = False
        object.__setattr__(self, "onset", onset)
        cum = np.concatenate([np.zeros(onset.shape[:-1] + (1,)), np.cumsum(onset, axis=-1)], axis=-1)
        cum = np.minimum(cum, 1.0)
        cum.flags.writeable = False
        object.__setattr__(self, "cumulative", cum)

    @property
    def prior(self) -> np.ndarray:
        return founder_prior(self.loci)

    @property
    def allele_freqs(self):
        return tuple(l.allele_freq for l in self.loci)

    def lifetime(self, cls: int, sex: int, cancer: int) -> float:
        return float(self.cumulative[cls, sex, cancer, MAX_AGE])

    def with_allele_freqs(self, f1: float, f2: float) -> "PenetranceModel":
        return PenetranceModel(loci=(LocusModel(self.loci[0].name, f1), LocusModel(self.loci[1].name, f2)),
                               onset=self.onset, death_mean=self.death_mean, death_sd=self.death_sd,
                               gap_mean=self.gap_mean, gap_sd=self.gap_sd, config=self.config)


def build_default_penetrance(config: PenetranceConfig | dict | None = None) -> PenetranceModel:
    """Synthetic penetrance tables hitting the configured lifetime risks."""
    if config is None:
        config = PenetranceConfig()
    elif isinstance(config, dict):
        config = PenetranceConfig.from_dict(config)
    if config.shape != "weibull":
        raise ValueError(f"unknown penetrance shape family {config.shape!r}")
    onset = np.zeros((N_CLASSES, 2, 2, MAX_AGE))
    for sex_name, sex in (("female", FEMALE), ("male", MALE)):
        for cancer_name, cancer in (("breast", BREAST), ("ovarian", OVARIAN)):
            targets = config.lifetime[sex_name][cancer_name]
            if len(targets) != N_CLASSES:
                raise ValueError(f"need {N_CLASSES} lifetime targets for {sex_name} {cancer_name}")
            for cls in range(N_CLASSES):
                median = config.median_noncarrier if cls == NONCARRIER else config.median_carrier
                onset[cls, sex, cancer] = weibull_onset_table(float(targets[cls]), median)
    f1, f2 = config.allele_freqs
    return PenetranceModel(
        loci=(LocusModel("locus1", f1), LocusModel("locus2", f2)), onset=onset,
        death_mean=config.death_mean, death_sd=config.death_sd,
        gap_mean=config.gap_mean, gap_sd=config.gap_sd, config=config,
    )


# ---- phenotype likelihood ---------------------------------------------

def _cancer_factor(model, sex, cancer, status, onset, age):
    """Per-member, per-class likelihood factor for one cancer; shape (n, 4)."""
    n = len(sex)
    out = np.ones((n, N_CLASSES))
    table = model.onset[:, :, cancer, :]            # (4, 2, 94)
    cum = model.cumulative[:, :, cancer, :]          # (4, 2, 95)
    affected = status == 1
    known_onset = affected & (onset > 0)
    if known_onset.any():
        if (onset[known_onset] > MAX_AGE).any():
            raise ValueError(f"onset age outside [1, {MAX_AGE}]")
        out[known_onset] = table[:, sex[known_onset], onset[known_onset] - 1].T
    unknown_onset = affected & (onset == MISSING)
    if unknown_onset.any():
        a = np.where(age[unknown_onset] == MISSING, MAX_AGE, np.minimum(age[unknown_onset], MAX_AGE))
        out[unknown_onset] = cum[:, sex[unknown_onset], a].T
    unaffected = ~affected & (age != MISSING)
    if unaffected.any():
        a = np.clip(age[unaffected], 0, MAX_AGE)
        out[unaffected] = 1.0 - cum[:, sex[unaffected], a].T
    return out


def class_likelihoods(model: PenetranceModel, sex, current_age, bc_status, bc_onset,
                      oc_status, oc_onset) -> np.ndarray:
    """Vectorized P(phenotype | carrier class) for many members; shape (n, 4)."""
    sex = np.asarray(sex, dtype=np.int64)
    age = np.asarray(current_age, dtype=np.int64)
    lik = _cancer_factor(model, sex, BREAST, np.asarray(bc_status), np.asarray(bc_onset, dtype=np.int64), age)
    lik *= _cancer_factor(model, sex, OVARIAN, np.asarray(oc_status), np.asarray(oc_onset, dtype=np.int64), age)
    return lik


def pedigree_class_likelihoods(p, model: PenetranceModel) -> np.ndarray:
    return class_likelihoods(model, p.sex, p.current_age, p.bc_status, p.bc_onset_age,
                             p.oc_status, p.oc_onset_age)


def phenotype_likelihood(member, carrier_cls: int, model: PenetranceModel) -> float:
    """P(observed phenotype of ``member`` | carrier class)."""
    def v(x):
        return MISSING if x is None else x

    lik = class_likelihoods(model, [member.sex], [v(member.current_age)], [member.bc_status],
                            [v(member.bc_onset_age)], [member.oc_status], [v(member.oc_onset_age)])
    return float(lik[0, carrier_cls])
