"""Fixed-shape pedigree encodings: reference structures, slots, neighbourhoods, scaling.

A reference structure fixes how many relatives of each type get a slot.
Slots are laid out counselee first, then parents, grandparents,
aunts/uncles, siblings and children, so slot ``j`` means the same relative
type in every encoded family.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pedigree import MISSING, Pedigree, RelativeType as RT

FEATURES = ("age", "bc_status", "oc_status", "bc_onset", "oc_onset", "sex", "absent")
K = 6
N_FEATURES = K + 1

SLOT_ORDER = (
    RT.COUNSELEE, RT.MOTHER, RT.FATHER,
    RT.MATERNAL_GRANDMOTHER, RT.MATERNAL_GRANDFATHER, RT.PATERNAL_GRANDMOTHER, RT.PATERNAL_GRANDFATHER,
    RT.MATERNAL_AUNT, RT.MATERNAL_UNCLE, RT.PATERNAL_AUNT, RT.PATERNAL_UNCLE,
    RT.SISTER, RT.BROTHER, RT.DAUGHTER, RT.SON,
)
_FIXED = SLOT_ORDER[:7]


@dataclass(frozen=True)
class ReferenceStructure:
    """Slot counts per relative type plus neighbourhood sizes ``m``."""

    counts: dict
    m: tuple = (3, 3, 2, 2)
    name: str = "custom"

    def __post_init__(self):
        counts = {}
        for q in SLOT_ORDER:
            v = int(self.counts.get(q, self.counts.get(q.label, 1 if q in _FIXED else 0)))
            if q in _FIXED and v != 1:
                raise ValueError(f"reference must hold exactly one {q.label}")
            if v < 0:
                raise ValueError(f"negative slot count for {q.label}")
            counts[q] = v
        object.__setattr__(self, "counts", counts)
        m = tuple(int(x) for x in self.m)
        if len(m) != 4 or min(m) < 0:
            raise ValueError("m must be four nonnegative neighbourhood sizes")
        object.__setattr__(self, "m", m)

    @property
    def slot_types(self) -> np.ndarray:
        return np.array([q for q in SLOT_ORDER for _ in range(self.counts[q])], dtype=np.int64)

    @property
    def size(self) -> int:
        return sum(self.counts.values())

    @property
    def U(self) -> int:
        return 3 + sum(self.m)

    @property
    def input_length(self) -> int:
        return self.size * N_FEATURES

    def slots_of(self, q) -> np.ndarray:
        return np.flatnonzero(self.slot_types == int(q))

    def to_dict(self) -> dict:
        return {"name": self.name, "counts": {q.label: c for q, c in self.counts.items()}, "m": list(self.m)}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceStructure":
        counts = {RT.from_label(k): v for k, v in d["counts"].items()}
        return cls(counts=counts, m=tuple(d.get("m", (3, 3, 2, 2))), name=d.get("name", "custom"))

    @classmethod
    def from_file(cls, path) -> "ReferenceStructure":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def preset(cls, name: str) -> "ReferenceStructure":
        try:
            counts, m = _PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown reference preset {name!r}; choose from {sorted(_PRESETS)}") from None
        return cls(counts=dict(counts), m=m, name=name)

    @classmethod
    def default(cls) -> "ReferenceStructure":
        return cls.preset("q3s")


def _counts(ma, mu, pa, pu, sis, bro, dau, son):
    return {RT.MATERNAL_AUNT: ma, RT.MATERNAL_UNCLE: mu, RT.PATERNAL_AUNT: pa, RT.PATERNAL_UNCLE: pu,
            RT.SISTER: sis, RT.BROTHER: bro, RT.DAUGHTER: dau, RT.SON: son}


_PRESETS = {
    "q3s": (_counts(2, 3, 3, 2, 2, 3, 2, 2), (3, 3, 2, 2)),
    "q1s": (_counts(1, 2, 1, 0, 0, 1, 1, 1), (3, 3, 2, 2)),
    "size19": (_counts(2, 2, 2, 2, 2, 2, 0, 0), (2, 2, 1, 1)),
    "counselee_only": ({q: 0 for q in SLOT_ORDER[7:]}, (3, 3, 2, 2)),
}


# ---- standardization -------------------------------------------------------

@dataclass(frozen=True)
class StandardizedInput:
    """``H`` is the (slots, 7) matrix; ``mapped[j]`` is the member in slot ``j`` or -1."""

    H: np.ndarray
    mapped: np.ndarray
    ref: ReferenceStructure = field(repr=False)

    @property
    def X(self) -> np.ndarray:
        return flatten(self.H)


def member_features(p: Pedigree) -> np.ndarray:
    """(n, 6) raw features; missing ages and onsets are encoded as 0."""
    def z(a):
        return np.where(a == MISSING, 0, a)

    return np.stack([z(p.current_age), p.bc_status, p.oc_status, z(p.bc_onset_age),
                     z(p.oc_onset_age), p.sex], axis=1).astype(float)


def assign_slots(p: Pedigree, ref: ReferenceStructure, rng=None) -> np.ndarray:
    """Member position per reference slot (-1 where absent).

    Types with more members than slots keep a uniform random subset, listed
    in member order.
    """
    types = p.relative_types
    mapped = np.full(ref.size, -1, dtype=np.int64)
    j = 0
    for q in SLOT_ORDER:
        k = ref.counts[q]
        if k == 0:
            continue
        members = np.flatnonzero(types == int(q))
        if len(members) > k:
            if rng is None:
                rng = np.random.default_rng(0)
            members = np.sort(rng.choice(members, size=k, replace=False))
        mapped[j:j + len(members)] = members
        j += k
    return mapped


def standardize(p: Pedigree, ref: ReferenceStructure | None = None, seed=0) -> StandardizedInput:
    ref = ref or ReferenceStructure.default()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mapped = assign_slots(p, ref, rng)
    H = np.zeros((ref.size, N_FEATURES))
    present = mapped >= 0
    H[present, :K] = member_features(p)[mapped[present]]
    H[~present, K] = 1.0
    return StandardizedInput(H, mapped, ref)


def flatten(H: np.ndarray) -> np.ndarray:
    """Row-major concatenation of the slot rows."""
    return np.ascontiguousarray(H).reshape(*H.shape[:-2], -1)


def encode_cohort(pedigrees, ref: ReferenceStructure | None = None, seed: int = 0) -> np.ndarray:
    """Flattened inputs ``(n, slots * 7)``; family ``i`` samples with ``default_rng([seed, i])``."""
    ref = ref or ReferenceStructure.default()
    out = np.zeros((len(pedigrees), ref.size, N_FEATURES))
    for i, p in enumerate(pedigrees):
        mapped = assign_slots(p, ref, _LazyRng(seed, i))
        present = mapped >= 0
        out[i, present, :K] = member_features(p)[mapped[present]]
        out[i, ~present, K] = 1.0
    return flatten(out)


class _LazyRng:
    """Creates the per-family generator only when sampling is needed."""

    def __init__(self, seed, i):
        self.key = [seed, i]

    def choice(self, *a, **kw):
        return np.random.default_rng(self.key).choice(*a, **kw)


def append_covariates(X: np.ndarray, extra) -> np.ndarray:
    extra = np.asarray(extra, dtype=float)
    if extra.ndim == 1:
        extra = extra[:, None] if X.ndim == 2 else extra
    return np.concatenate([X, extra], axis=-1)


def summarize_loss(pedigrees, ref: ReferenceStructure | None = None) -> float:
    """Mean fraction of each family's members that get no slot."""
    ref = ref or ReferenceStructure.default()
    pedigrees = list(pedigrees)
    if not pedigrees:
        raise ValueError("summarize_loss needs at least one family")
    fractions = []
    for p in pedigrees:
        counts = np.bincount(p.relative_types, minlength=len(RT))
        kept = sum(min(int(counts[q]), ref.counts[q]) for q in SLOT_ORDER)
        fractions.append((len(p) - kept) / len(p))
    return float(np.mean(fractions))


# ---- neighbourhoods ---------------------------------------------------------

def _reference_family(ref: ReferenceStructure):
    """Parent slots and child lists of the reference pedigree itself."""
    slots = {q: list(ref.slots_of(q)) for q in SLOT_ORDER}
    one = {q: (slots[q][0] if slots[q] else None) for q in _FIXED}
    parents = {}

    def setp(qs, mo, fa):
        for q in qs:
            for s in slots[q]:
                parents[s] = (mo, fa)

    setp([RT.COUNSELEE, RT.SISTER, RT.BROTHER], one[RT.MOTHER], one[RT.FATHER])
    setp([RT.MOTHER, RT.MATERNAL_AUNT, RT.MATERNAL_UNCLE], one[RT.MATERNAL_GRANDMOTHER], one[RT.MATERNAL_GRANDFATHER])
    setp([RT.FATHER, RT.PATERNAL_AUNT, RT.PATERNAL_UNCLE], one[RT.PATERNAL_GRANDMOTHER], one[RT.PATERNAL_GRANDFATHER])
    setp([RT.DAUGHTER, RT.SON], one[RT.COUNSELEE], None)
    for q in _FIXED[3:]:
        parents[one[q]] = (None, None)
    return parents


def build_neighborhoods(ref: ReferenceStructure | None = None, m=None, seed: int = 0) -> np.ndarray:
    """Neighbourhood index map of shape ``(slots, U)``.

    Row ``r`` lists ``r``, its mother, its father, then up to ``m1`` sisters,
    ``m2`` brothers, ``m3`` daughters and ``m4`` sons within the reference.
    Missing entries hold the sentinel ``ref.size``, which indexes a row of
    zeros. Overfull groups keep a seeded uniform subset in slot order.
    """
    ref = ref or ReferenceStructure.default()
    m = tuple(ref.m if m is None else m)
    rng = np.random.default_rng(seed)
    S = ref.size
    sex_female = {q: q in (RT.COUNSELEE, RT.MOTHER, RT.MATERNAL_GRANDMOTHER, RT.PATERNAL_GRANDMOTHER,
                           RT.MATERNAL_AUNT, RT.PATERNAL_AUNT, RT.SISTER, RT.DAUGHTER) for q in SLOT_ORDER}
    types = ref.slot_types
    female = np.array([sex_female[RT(t)] for t in types])
    parents = _reference_family(ref)
    U = 3 + sum(m)
    nbr = np.full((S, U), S, dtype=np.int64)

    def pick(cands, k):
        cands = sorted(cands)
        if len(cands) > k:
            cands = sorted(rng.choice(cands, size=k, replace=False).tolist())
        return cands

    for r in range(S):
        mo, fa = parents[r]
        nbr[r, 0] = r
        nbr[r, 1] = S if mo is None else mo
        nbr[r, 2] = S if fa is None else fa
        sibs = [s for s in range(S) if s != r and mo is not None and parents[s] == (mo, fa)]
        kids = [s for s in range(S) if parents[s][0] == r or parents[s][1] == r]
        groups = (
            [s for s in sibs if female[s]], [s for s in sibs if not female[s]],
            [s for s in kids if female[s]], [s for s in kids if not female[s]],
        )
        pos = 3
        for cands, k in zip(groups, m):
            chosen = pick(cands, k)
            nbr[r, pos:pos + len(chosen)] = chosen
            pos += k
    return nbr


# ---- scaling ----------------------------------------------------------------

class NotFittedError(RuntimeError):
    pass


@dataclass
class FeatureScaler:
    """Column-wise min-max scaling learned from training inputs."""

    min_: np.ndarray | None = None
    max_: np.ndarray | None = None

    def fit(self, X) -> "FeatureScaler":
        X = np.asarray(X, dtype=float)
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        return self

    def transform(self, X) -> np.ndarray:
        if self.min_ is None:
            raise NotFittedError("scaler must be fitted before use")
        X = np.asarray(X, dtype=float)
        span = self.max_ - self.min_
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.min_) / safe, 0.0)

    def fit_transform(self, X) -> np.ndarray:
        return self.fit(X).transform(X)

    def to_dict(self) -> dict:
        if self.min_ is None:
            raise NotFittedError("scaler must be fitted before use")
        return {"min": self.min_.tolist(), "max": self.max_.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureScaler":
        return cls(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))


def fit_scaler(X) -> FeatureScaler:
    return FeatureScaler().fit(X)


def apply_scaler(scaler: FeatureScaler, X) -> np.ndarray:
    return scaler.transform(X)
