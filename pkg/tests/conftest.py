import numpy as np
import pytest

from pedrisk.genetics import build_default_penetrance
from pedrisk.pedigree import FEMALE, MISSING, Pedigree
from pedrisk.simulate import StructureDistribution, simulate_family

ACCEPTANCE = {}


def record(number, name, passed, detail=""):
    ACCEPTANCE[number] = (name, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def model():
    return build_default_penetrance()


_SMALL = StructureDistribution.poisson({"maternal_aunt": 0.6, "maternal_uncle": 0.6, "paternal_aunt": 0.6,
                                        "paternal_uncle": 0.6, "sister": 0.8, "brother": 0.8,
                                        "daughter": 0.8, "son": 0.8})


def random_family(rng, model, max_relatives=8, family_id="R"):
    """A loop-free family with at most ``max_relatives`` relatives and enriched phenotypes."""
    p = simulate_family(rng, _SMALL, model, family_id=family_id).pedigree
    n = len(p)
    if n - 1 > max_relatives:
        keep = np.sort(rng.choice(np.arange(1, n), size=max_relatives, replace=False))
        p = p.subset([0, *keep.tolist()])
        n = len(p)
    age = p.current_age.copy()
    bc, bco = p.bc_status.copy(), p.bc_onset_age.copy()
    oc, oco = p.oc_status.copy(), p.oc_onset_age.copy()
    for r in range(1, n):
        if age[r] >= 18 and rng.random() < 0.3:
            bc[r], bco[r] = 1, rng.integers(18, age[r] + 1)
        if p.sex[r] == FEMALE and age[r] >= 18 and rng.random() < 0.15:
            oc[r], oco[r] = 1, rng.integers(18, age[r] + 1)
        if bc[r] and rng.random() < 0.1:
            bco[r] = MISSING
        if rng.random() < 0.05:
            age[r] = MISSING
            bco[r] = MISSING if bc[r] else 0
            oco[r] = MISSING if oc[r] else 0
    return p.replace(current_age=age, bc_status=bc, bc_onset_age=bco, oc_status=oc, oc_onset_age=oco)


@pytest.fixture
def family_factory(model):
    def make(seed, max_relatives=8):
        return random_family(np.random.default_rng(seed), model, max_relatives, family_id=f"R{seed}")
    return make


def nuclear_family() -> Pedigree:
    from pedrisk.pedigree import Member
    return Pedigree.from_members([
        Member(0, 1, 2, FEMALE, 35),
        Member(1, None, None, FEMALE, 62, bc_status=1, bc_onset_age=44),
        Member(2, None, None, 1, 64),
        Member(3, 1, 2, FEMALE, 38, oc_status=1, oc_onset_age=37),
        Member(4, 1, 2, 1, 31),
    ], family_id="nuclear")
