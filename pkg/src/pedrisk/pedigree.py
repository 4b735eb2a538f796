"""Pedigree data model.

A :class:`Pedigree` is stored column-wise: one numpy array per field, one
entry per member, counselee at position 0. Parent links are positions
(``-1`` when unknown). Missing current ages and missing onset ages of
affected members are stored as ``MISSING`` (-1).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

MISSING = -1
MAX_AGE = 94
FEMALE, MALE = 0, 1

_FIELDS = ("ids", "mother", "father", "sex", "current_age", "deceased",
           "bc_status", "oc_status", "bc_onset_age", "oc_onset_age")


class RelativeType(enum.IntEnum):
    COUNSELEE = 0
    MOTHER = 1
    FATHER = 2
    MATERNAL_GRANDMOTHER = 3
    MATERNAL_GRANDFATHER = 4
    PATERNAL_GRANDMOTHER = 5
    PATERNAL_GRANDFATHER = 6
    MATERNAL_AUNT = 7
    MATERNAL_UNCLE = 8
    PATERNAL_AUNT = 9
    PATERNAL_UNCLE = 10
    SISTER = 11
    BROTHER = 12
    DAUGHTER = 13
    SON = 14
    OTHER = 15

    @property
    def degree(self) -> Optional[int]:
        """Degree of relationship to the counselee (None for ``OTHER``)."""
        return _DEGREE[self]

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "RelativeType":
        return cls[label.strip().upper()]


_DEGREE = {RelativeType.COUNSELEE: 0, RelativeType.OTHER: None}
for _t in (RelativeType.MOTHER, RelativeType.FATHER, RelativeType.SISTER,
           RelativeType.BROTHER, RelativeType.DAUGHTER, RelativeType.SON):
    _DEGREE[_t] = 1
for _t in (RelativeType.MATERNAL_GRANDMOTHER, RelativeType.MATERNAL_GRANDFATHER,
           RelativeType.PATERNAL_GRANDMOTHER, RelativeType.PATERNAL_GRANDFATHER,
           RelativeType.MATERNAL_AUNT, RelativeType.MATERNAL_UNCLE,
           RelativeType.PATERNAL_AUNT, RelativeType.PATERNAL_UNCLE):
    _DEGREE[_t] = 2

FEMALE_TYPES = frozenset({
    RelativeType.MOTHER, RelativeType.MATERNAL_GRANDMOTHER, RelativeType.PATERNAL_GRANDMOTHER,
    RelativeType.MATERNAL_AUNT, RelativeType.PATERNAL_AUNT, RelativeType.SISTER,
    RelativeType.DAUGHTER,
})


@dataclass(frozen=True)
class Member:
    id: int
    mother_id: Optional[int]
    father_id: Optional[int]
    sex: int
    current_age: Optional[int]
    deceased: bool = False
    bc_status: int = 0
    oc_status: int = 0
    bc_onset_age: Optional[int] = 0
    oc_onset_age: Optional[int] = 0


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Pedigree:
    ids: np.ndarray
    mother: np.ndarray
    father: np.ndarray
    sex: np.ndarray
    current_age: np.ndarray
    deceased: np.ndarray
    bc_status: np.ndarray
    oc_status: np.ndarray
    bc_onset_age: np.ndarray
    oc_onset_age: np.ndarray
    family_id: str = field(default="0")

    def __post_init__(self):
        n = len(self.ids)
        for name in _FIELDS:
            arr = getattr(self, name)
            dtype = np.bool_ if name == "deceased" else np.int64
            if not isinstance(arr, np.ndarray) or arr.dtype != dtype or arr.flags.writeable:
                object.__setattr__(self, name, _frozen(arr, dtype))
            if len(getattr(self, name)) != n:
                raise ValueError(f"field {name} has length {len(getattr(self, name))}, expected {n}")
        if n == 0:
            raise ValueError("a pedigree needs at least the counselee")

    # ---- construction -------------------------------------------------
    @classmethod
    def from_members(cls, members: Sequence[Member], family_id: str = "0") -> "Pedigree":
        """Build from members; ``members[0]`` is the counselee.

        Parent ids are resolved to positions. A parent id that names no
        member raises ``ValueError``.
        """
        pos = {}
        for i, m in enumerate(members):
            if m.id in pos:
                raise ValueError(f"duplicate member id {m.id} in family {family_id}")
            pos[m.id] = i

        def link(pid, who):
            if pid is None:
                return -1
            if pid not in pos:
                raise ValueError(f"member {who}: parent id {pid} not in family {family_id}")
            return pos[pid]

        def opt(v):
            return MISSING if v is None else int(v)

        return cls(
            ids=[m.id for m in members],
            mother=[link(m.mother_id, m.id) for m in members],
            father=[link(m.father_id, m.id) for m in members],
            sex=[m.sex for m in members],
            current_age=[opt(m.current_age) for m in members],
            deceased=[bool(m.deceased) for m in members],
            bc_status=[m.bc_status for m in members],
            oc_status=[m.oc_status for m in members],
            bc_onset_age=[opt(m.bc_onset_age) for m in members],
            oc_onset_age=[opt(m.oc_onset_age) for m in members],
            family_id=str(family_id),
        )

    def replace(self, **changes) -> "Pedigree":
        kw = {name: getattr(self, name) for name in _FIELDS}
        kw["family_id"] = self.family_id
        kw.update(changes)
        return Pedigree(**kw)

    def subset(self, keep: Iterable[int]) -> "Pedigree":
        """Keep the given positions (counselee must be among them).

        Parent links to removed members become unknown.
        """
        keep = sorted(set(int(k) for k in keep))
        if not keep or keep[0] != 0:
            raise ValueError("subset must keep the counselee")
        remap = np.full(len(self), -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        keep_arr = np.array(keep)

        def relink(par):
            p = par[keep_arr]
            return np.where(p >= 0, remap[np.maximum(p, 0)], -1)

        kw = {name: getattr(self, name)[keep_arr] for name in _FIELDS}
        kw["mother"] = relink(self.mother)
        kw["father"] = relink(self.father)
        return Pedigree(family_id=self.family_id, **kw)

    # ---- views --------------------------------------------------------
    def __len__(self):
        return len(self.ids)

    @property
    def R(self) -> int:
        return len(self) - 1

    def member(self, r: int) -> Member:
        def opt(v):
            return None if v == MISSING else int(v)

        mo, fa = self.mother[r], self.father[r]
        return Member(
            id=int(self.ids[r]),
            mother_id=None if mo < 0 else int(self.ids[mo]),
            father_id=None if fa < 0 else int(self.ids[fa]),
            sex=int(self.sex[r]),
            current_age=opt(self.current_age[r]),
            deceased=bool(self.deceased[r]),
            bc_status=int(self.bc_status[r]),
            oc_status=int(self.oc_status[r]),
            bc_onset_age=opt(self.bc_onset_age[r]),
            oc_onset_age=opt(self.oc_onset_age[r]),
        )

    @property
    def members(self) -> list:
        return [self.member(r) for r in range(len(self))]

    def __eq__(self, other):
        if not isinstance(other, Pedigree):
            return NotImplemented
        return self.family_id == other.family_id and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in _FIELDS)

    def __hash__(self):
        return hash((self.family_id, self.ids.tobytes(), self.bc_onset_age.tobytes()))

    @cached_property
    def relative_types(self) -> np.ndarray:
        """RelativeType code of every member (see :func:`classify_relative`)."""
        return _classify_all(self)

    def children_of(self, r: int) -> np.ndarray:
        return np.flatnonzero((self.mother == r) | (self.father == r))


# ---- relative classification -------------------------------------------

def _parents(p: Pedigree, r: int):
    return {int(x) for x in (p.mother[r], p.father[r]) if x >= 0}


def _classify_all(p: Pedigree) -> np.ndarray:
    n = len(p)
    out = np.full(n, int(RelativeType.OTHER), dtype=np.int64)
    out[0] = RelativeType.COUNSELEE
    mo, fa = int(p.mother[0]), int(p.father[0])
    female = p.sex == FEMALE

    def set_type(r, t):
        if out[r] == RelativeType.OTHER:
            out[r] = t

    if mo >= 0:
        set_type(mo, RelativeType.MOTHER)
    if fa >= 0:
        set_type(fa, RelativeType.FATHER)
    sides = []
    if mo >= 0:
        sides.append((mo, RelativeType.MATERNAL_GRANDMOTHER, RelativeType.MATERNAL_GRANDFATHER,
                      RelativeType.MATERNAL_AUNT, RelativeType.MATERNAL_UNCLE))
    if fa >= 0:
        sides.append((fa, RelativeType.PATERNAL_GRANDMOTHER, RelativeType.PATERNAL_GRANDFATHER,
                      RelativeType.PATERNAL_AUNT, RelativeType.PATERNAL_UNCLE))
    for parent, gm_t, gf_t, aunt_t, uncle_t in sides:
        gm, gf = int(p.mother[parent]), int(p.father[parent])
        if gm >= 0:
            set_type(gm, gm_t)
        if gf >= 0:
            set_type(gf, gf_t)
        gp = {x for x in (gm, gf) if x >= 0}
        if gp:
            for r in range(1, n):
                if r != parent and _parents(p, r) & gp:
                    set_type(r, aunt_t if female[r] else uncle_t)
    cp = _parents(p, 0)
    for r in range(1, n):
        if cp and _parents(p, r) & cp:
            set_type(r, RelativeType.SISTER if female[r] else RelativeType.BROTHER)
        elif p.mother[r] == 0 or p.father[r] == 0:
            set_type(r, RelativeType.DAUGHTER if female[r] else RelativeType.SON)
    return out


def classify_relative(p: Pedigree, r: int) -> RelativeType:
    """Relationship of member ``r`` to the counselee, up to second degree.

    Half-siblings count as siblings. Anything the parent links cannot
    place within two degrees is ``OTHER``.
    """
    if not 0 <= r < len(p):
        raise IndexError(f"member index {r} out of range for family of size {len(p)}")
    return RelativeType(int(p.relative_types[r]))


def relative_degree(p: Pedigree, r: int) -> Optional[int]:
    """Degree of relationship to the counselee via the nearest shared ancestor.

    Lineal relatives get their generation gap; collateral relatives get
    ``d0 + dr - 1`` (siblings 1, aunts and nieces 2, cousins 3). Used to
    cross-check :func:`classify_relative`. None when unrelated.
    """
    anc0 = _ancestors_with_depth(p, 0)
    ancr = _ancestors_with_depth(p, r)
    best = None
    for a, d0 in anc0.items():
        if a in ancr:
            dr = ancr[a]
            d = d0 + dr if min(d0, dr) == 0 else d0 + dr - 1
            best = d if best is None else min(best, d)
    return best


def _ancestors_with_depth(p: Pedigree, r: int) -> dict:
    out = {r: 0}
    frontier = [r]
    while frontier:
        nxt = []
        for x in frontier:
            for par in (p.mother[x], p.father[x]):
                par = int(par)
                if par >= 0 and par not in out:
                    out[par] = out[x] + 1
                    nxt.append(par)
        frontier = nxt
    return out


# ---- validation ----------------------------------------------------------

def find_marriage_loop(p: Pedigree) -> Optional[str]:
    """Return a description of the first marriage/consanguinity loop, or None.

    Individuals and matings form a bipartite graph (parents and children
    attached to their mating node); the pedigree is loop-free exactly when
    that graph is a forest. Unknown parents become distinct placeholder
    nodes, so they never close a loop.
    """
    n = len(p)
    parent = list(range(n))
    matings = {}

    def node(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = node(a), node(b)
        if ra == rb:
            return False
        parent[ra] = rb
        return True

    for c in range(n):
        mo, fa = int(p.mother[c]), int(p.father[c])
        if mo < 0 and fa < 0:
            continue
        # children of one known parent share the same unknown mate
        key = (mo, fa)
        if key not in matings:
            matings[key] = len(parent)
            parent.append(len(parent))
            for par in (mo, fa):
                if par >= 0 and not union(par, matings[key]):
                    return f"loop through mating of members {p.ids[max(mo, 0)]}/{p.ids[max(fa, 0)]}"
        if not union(c, matings[key]):
            return f"loop closed at member {p.ids[c]}"
    return None


def validate(p: Pedigree) -> list:
    """List every invariant violation; an empty list means the pedigree is valid."""
    out = []
    ids = [int(x) for x in p.ids]
    if len(set(ids)) != len(ids):
        out.append("duplicate member ids")
    if ids and ids[0] != 0:
        out.append(f"member {ids[0]}: counselee must have member id 0")
    n = len(p)
    for r in range(n):
        mid = ids[r]
        age = int(p.current_age[r])
        if p.sex[r] not in (FEMALE, MALE):
            out.append(f"member {mid}: sex must be 0 or 1")
        if age != MISSING and not 0 <= age <= MAX_AGE:
            out.append(f"member {mid}: current_age {age} outside [0, {MAX_AGE}]")
        for cancer, status, onset in (("bc", p.bc_status[r], p.bc_onset_age[r]),
                                      ("oc", p.oc_status[r], p.oc_onset_age[r])):
            status, onset = int(status), int(onset)
            if status not in (0, 1):
                out.append(f"member {mid}: {cancer}_status must be 0 or 1")
            elif status == 1 and onset == 0:
                out.append(f"member {mid}: {cancer}_status=1 requires {cancer}_onset_age > 0")
            elif status == 0 and onset != 0:
                out.append(f"member {mid}: {cancer}_status=0 requires {cancer}_onset_age = 0")
            if status == 1 and onset > 0:
                if onset > MAX_AGE:
                    out.append(f"member {mid}: {cancer}_onset_age {onset} outside [1, {MAX_AGE}]")
                if age != MISSING and onset > age:
                    out.append(f"member {mid}: {cancer}_onset_age {onset} exceeds current_age {age}")
        if p.oc_status[r] == 1 and p.sex[r] != FEMALE:
            out.append(f"member {mid}: ovarian cancer in a male")
        mo, fa = int(p.mother[r]), int(p.father[r])
        if mo == r or fa == r:
            out.append(f"member {mid}: is their own parent")
        if mo >= 0 and p.sex[mo] != FEMALE:
            out.append(f"member {mid}: mother {ids[mo]} is not female")
        if fa >= 0 and p.sex[fa] != MALE:
            out.append(f"member {mid}: father {ids[fa]} is not male")
    cyc = _find_cycle(p)
    if cyc is not None:
        out.append(f"member {ids[cyc]}: is their own ancestor")
    else:
        loop = find_marriage_loop(p)
        if loop:
            out.append(loop)
    return out


def _find_cycle(p: Pedigree) -> Optional[int]:
    n = len(p)
    state = np.zeros(n, dtype=np.int8)  # 0 new, 1 on stack, 2 done
    for start in range(n):
        if state[start]:
            continue
        stack = [(start, iter((int(p.mother[start]), int(p.father[start]))))]
        state[start] = 1
        while stack:
            x, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[x] = 2
                stack.pop()
            elif nxt >= 0:
                if state[nxt] == 1:
                    return nxt
                if state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, iter((int(p.mother[nxt]), int(p.father[nxt])))))
    return None


class PedigreeError(ValueError):
    """Raised when a pedigree fails validation where validity is required."""


def require_valid(p: Pedigree) -> None:
    problems = validate(p)
    if problems:
        raise PedigreeError(f"family {p.family_id}: " + "; ".join(problems))
