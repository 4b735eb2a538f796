"""Elston-Stewart peeling over the 9-state joint genotype space.

The counselee's genotype marginal is assembled from anterior and
posterior messages (Lange & Elston formulation):

* ``A[i]`` -- probability of everything attached to ``i`` through ``i``'s
  parents, jointly with ``i``'s genotype;
* ``P[k, side]`` -- probability of everything attached through mating
  ``k`` (mate plus offspring subtrees) given the genotype of the parent on
  ``side`` (0 mother, 1 father).

A Python pass turns the pedigree into a flat program of message updates
ordered by dependency; a kernel (numba, or numpy when
``PEDRISK_BACKEND=numpy``) evaluates it. Each message is rescaled to sum 1,
which leaves the normalized posterior unchanged.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from . import _accel
from .genetics import N_STATES, TRANSMISSION
from .pedigree import FEMALE, MALE, Pedigree, find_marriage_loop


class PedigreeLoopError(ValueError):
    """The pedigree contains a marriage or consanguinity loop."""


OP_PRIOR, OP_ANTERIOR, OP_POSTERIOR = 0, 1, 2


@dataclass(frozen=True)
class Structure:
    """Parent links with unknown parents replaced by shared placeholder founders."""

    n_real: int
    mother: np.ndarray
    father: np.ndarray
    sex: np.ndarray


def with_placeholders(p: Pedigree) -> Structure:
    """Give every one-parent child an explicit unknown parent.

    Children of the same known parent share one placeholder mate, so they
    stay full siblings. Placeholders are appended after the real members.
    """
    mother = list(int(x) for x in p.mother)
    father = list(int(x) for x in p.father)
    sex = list(int(x) for x in p.sex)
    n = len(p)
    made = {}
    for c in range(n):
        mo, fa = mother[c], father[c]
        if (mo < 0) == (fa < 0):
            continue
        known, missing_sex = (mo, MALE) if mo >= 0 else (fa, FEMALE)
        if known not in made:
            made[known] = len(sex)
            mother.append(-1)
            father.append(-1)
            sex.append(missing_sex)
        if mo < 0:
            mother[c] = made[known]
        else:
            father[c] = made[known]
    return Structure(n, np.array(mother, dtype=np.int64), np.array(father, dtype=np.int64),
                     np.array(sex, dtype=np.int64))


@dataclass(frozen=True)
class PeelProgram:
    n_members: int
    n_matings: int
    op_type: np.ndarray
    op_target: np.ndarray   # member (prior/anterior) or mating (posterior)
    op_side: np.ndarray     # posterior: 0 if the message is for the mother
    op_list_ptr: np.ndarray  # siblings (anterior) or children (posterior)
    op_list: np.ndarray
    mat_mother: np.ndarray
    mat_father: np.ndarray
    child_mating: np.ndarray  # mating each member was born into, -1 for founders
    mate_ptr: np.ndarray      # CSR over members: matings they parent
    mate_k: np.ndarray
    mate_side: np.ndarray
    root: int = 0


def compile_program(p: Pedigree) -> PeelProgram:
    """Order the message updates needed for the counselee's marginal.

    Raises :class:`PedigreeLoopError` for pedigrees with loops.
    """
    loop = find_marriage_loop(p)
    if loop:
        raise PedigreeLoopError(f"family {p.family_id}: {loop}")
    st = with_placeholders(p)
    n = len(st.sex)
    matings = {}
    child_mating = np.full(n, -1, dtype=np.int64)
    kids = []
    for c in range(n):
        mo, fa = int(st.mother[c]), int(st.father[c])
        if mo < 0:
            continue
        k = matings.setdefault((mo, fa), len(matings))
        if k == len(kids):
            kids.append([])
        kids[k].append(c)
        child_mating[c] = k
    mat_mother = np.array([mf[0] for mf in matings], dtype=np.int64)
    mat_father = np.array([mf[1] for mf in matings], dtype=np.int64)
    mates = [[] for _ in range(n)]
    for (mo, fa), k in matings.items():
        mates[mo].append((k, 0))
        mates[fa].append((k, 1))

    ops = []
    state_a = {}
    state_p = {}

    def need_a(i):
        s = state_a.get(i)
        if s == 2:
            return
        if s == 1:
            raise PedigreeLoopError(f"family {p.family_id}: cyclic dependency at member {i}")
        state_a[i] = 1
        k = child_mating[i]
        if k < 0:
            ops.append((OP_PRIOR, i, 0, ()))
        else:
            for par in (mat_mother[k], mat_father[k]):
                need_a(int(par))
                need_excluding(int(par), k)
            sibs = tuple(s for s in kids[k] if s != i)
            for s in sibs:
                need_down(s)
            ops.append((OP_ANTERIOR, i, 0, sibs))
        state_a[i] = 2

    def need_excluding(x, k):
        for kk, side in mates[x]:
            if kk != k:
                need_p(kk, side)

    def need_down(c):
        for kk, side in mates[c]:
            need_p(kk, side)

    def need_p(k, side):
        key = (k, side)
        s = state_p.get(key)
        if s == 2:
            return
        if s == 1:
            raise PedigreeLoopError(f"family {p.family_id}: cyclic dependency at mating {k}")
        state_p[key] = 1
        mate = int(mat_father[k] if side == 0 else mat_mother[k])
        need_a(mate)
        need_excluding(mate, k)
        for c in kids[k]:
            need_down(c)
        ops.append((OP_POSTERIOR, k, side, tuple(kids[k])))
        state_p[key] = 2

    limit = sys.getrecursionlimit()
    if limit < 10 * n + 100:
        sys.setrecursionlimit(10 * n + 100)
    need_a(0)
    need_down(0)

    lists = [o[3] for o in ops]
    ptr = np.zeros(len(ops) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in lists])
    mate_ptr = np.zeros(n + 1, dtype=np.int64)
    mate_ptr[1:] = np.cumsum([len(m) for m in mates])
    return PeelProgram(
        n_members=n, n_matings=len(matings),
        op_type=np.array([o[0] for o in ops], dtype=np.int64),
        op_target=np.array([o[1] for o in ops], dtype=np.int64),
        op_side=np.array([o[2] for o in ops], dtype=np.int64),
        op_list_ptr=ptr,
        op_list=np.array([x for l in lists for x in l], dtype=np.int64),
        mat_mother=mat_mother, mat_father=mat_father, child_mating=child_mating,
        mate_ptr=mate_ptr,
        mate_k=np.array([k for m in mates for k, _ in m], dtype=np.int64),
        mate_side=np.array([s for m in mates for _, s in m], dtype=np.int64),
    )


# ---- numba kernel ---------------------------------------------------------

@_accel.njit
def _peel_kernel(op_type, op_target, op_side, op_list_ptr, op_list, mat_mother, mat_father,
                 child_mating, mate_ptr, mate_k, mate_side, lik, prior, trans, root):
    n = lik.shape[0]
    S = lik.shape[1]
    nk = mat_mother.shape[0]
    A = np.zeros((n, S))
    P = np.ones((max(nk, 1), 2, S))
    em = np.empty(S)
    ef = np.empty(S)
    down = np.empty(S)
    pair = np.empty((S, S))
    for o in range(op_type.shape[0]):
        t = op_type[o]
        if t == 0:
            i = op_target[o]
            for s in range(S):
                A[i, s] = prior[s]
            continue
        if t == 1:
            i = op_target[o]
            k = child_mating[i]
            mo = mat_mother[k]
            fa = mat_father[k]
        else:
            k = op_target[o]
            mo = mat_mother[k]
            fa = mat_father[k]
        # parent terms, excluding mating k; the posterior omits the target parent
        for s in range(S):
            em[s] = A[mo, s] * lik[mo, s]
            ef[s] = A[fa, s] * lik[fa, s]
        for j in range(mate_ptr[mo], mate_ptr[mo + 1]):
            if mate_k[j] != k:
                for s in range(S):
                    em[s] *= P[mate_k[j], mate_side[j], s]
        for j in range(mate_ptr[fa], mate_ptr[fa + 1]):
            if mate_k[j] != k:
                for s in range(S):
                    ef[s] *= P[mate_k[j], mate_side[j], s]
        for a in range(S):
            for b in range(S):
                pair[a, b] = 1.0
        for j in range(op_list_ptr[o], op_list_ptr[o + 1]):
            c = op_list[j]
            for s in range(S):
                down[s] = lik[c, s]
            for jj in range(mate_ptr[c], mate_ptr[c + 1]):
                for s in range(S):
                    down[s] *= P[mate_k[jj], mate_side[jj], s]
            for a in range(S):
                for b in range(S):
                    acc = 0.0
                    for s in range(S):
                        acc += trans[s, a, b] * down[s]
                    pair[a, b] *= acc
        total = 0.0
        if t == 1:
            i = op_target[o]
            for s in range(S):
                acc = 0.0
                for a in range(S):
                    for b in range(S):
                        acc += trans[s, a, b] * em[a] * ef[b] * pair[a, b]
                A[i, s] = acc
                total += acc
            if total > 0:
                for s in range(S):
                    A[i, s] /= total
        else:
            side = op_side[o]
            for s in range(S):
                acc = 0.0
                for r in range(S):
                    if side == 0:
                        acc += ef[r] * pair[s, r]
                    else:
                        acc += em[r] * pair[r, s]
                P[k, side, s] = acc
                total += acc
            if total > 0:
                for s in range(S):
                    P[k, side, s] /= total
    out = np.empty(S)
    for s in range(S):
        out[s] = A[root, s] * lik[root, s]
    for j in range(mate_ptr[root], mate_ptr[root + 1]):
        for s in range(S):
            out[s] *= P[mate_k[j], mate_side[j], s]
    return out


# ---- numpy path -------------------------------------------------------------

def _peel_numpy(prog: PeelProgram, lik, prior, trans):
    n, S = lik.shape
    A = np.zeros((n, S))
    P = np.ones((max(prog.n_matings, 1), 2, S))

    def matings_of(x):
        sl = slice(prog.mate_ptr[x], prog.mate_ptr[x + 1])
        return prog.mate_k[sl], prog.mate_side[sl]

    def excluding(x, k):
        v = A[x] * lik[x]
        for kk, side in zip(*matings_of(x)):
            if kk != k:
                v = v * P[kk, side]
        return v

    def down(c):
        v = lik[c].copy()
        for kk, side in zip(*matings_of(c)):
            v = v * P[kk, side]
        return v

    for o, t in enumerate(prog.op_type):
        tgt = prog.op_target[o]
        if t == OP_PRIOR:
            A[tgt] = prior
            continue
        k = prog.child_mating[tgt] if t == OP_ANTERIOR else tgt
        mo, fa = prog.mat_mother[k], prog.mat_father[k]
        em, ef = excluding(mo, k), excluding(fa, k)
        pair = np.ones((S, S))
        for c in prog.op_list[prog.op_list_ptr[o]:prog.op_list_ptr[o + 1]]:
            pair *= np.einsum("sab,s->ab", trans, down(c))
        if t == OP_ANTERIOR:
            v = np.einsum("sab,a,b,ab->s", trans, em, ef, pair)
            A[tgt] = v / v.sum() if v.sum() > 0 else v
        else:
            side = prog.op_side[o]
            v = pair @ ef if side == 0 else em @ pair
            P[k, side] = v / v.sum() if v.sum() > 0 else v
    out = A[prog.root] * lik[prog.root]
    for kk, side in zip(*matings_of(prog.root)):
        out = out * P[kk, side]
    return out


def run_program(prog: PeelProgram, lik_states: np.ndarray, prior: np.ndarray,
                use_numba: bool | None = None) -> np.ndarray:
    """Unnormalized counselee marginal over the 9 joint states.

    ``lik_states`` holds P(phenotype | state) for every real member; the
    placeholder members are appended with likelihood 1.
    """
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    n_real = lik_states.shape[0]
    lik = np.ones((prog.n_members, N_STATES))
    lik[:n_real] = lik_states
    prior = np.ascontiguousarray(prior, dtype=float)
    if use_numba:
        return _peel_kernel(prog.op_type, prog.op_target, prog.op_side, prog.op_list_ptr, prog.op_list,
                            prog.mat_mother, prog.mat_father, prog.child_mating, prog.mate_ptr,
                            prog.mate_k, prog.mate_side, lik, prior, TRANSMISSION, prog.root)
    return _peel_numpy(prog, lik, prior, TRANSMISSION)
