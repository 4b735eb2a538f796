import numpy as np
import pytest

from pedrisk.pedigree import (FEMALE, MALE, MISSING, Member, Pedigree, RelativeType, classify_relative,
                              find_marriage_loop, relative_degree, require_valid, validate, PedigreeError)
from pedrisk.pedio import PedigreeFormatError, format_csv, parse_csv, read_pedigrees, write_pedigrees


def three_generation():
    # counselee, parents, grandparents, a maternal aunt and uncle, a paternal aunt,
    # a sister, a daughter, and a first cousin (child of the maternal aunt)
    return Pedigree.from_members([
        Member(0, 1, 2, FEMALE, 45),
        Member(1, 3, 4, FEMALE, 70, deceased=True, bc_status=1, bc_onset_age=52),
        Member(2, 5, 6, MALE, 72),
        Member(3, None, None, FEMALE, 90, deceased=True, oc_status=1, oc_onset_age=61),
        Member(4, None, None, MALE, 85, deceased=True),
        Member(5, None, None, FEMALE, 88),
        Member(6, None, None, MALE, 91, deceased=True),
        Member(7, 3, 4, FEMALE, 66, bc_status=1, bc_onset_age=48),
        Member(8, 3, 4, MALE, 63),
        Member(9, 5, 6, FEMALE, 60),
        Member(10, 1, 2, FEMALE, 40),
        Member(11, 0, None, FEMALE, 18),
        Member(12, 7, None, MALE, 35),
    ], family_id="fam1")


def test_hand_transcribed_family_is_valid():
    assert validate(three_generation()) == []


def test_affected_without_onset_is_one_violation():
    p = three_generation()
    bc = p.bc_status.copy()
    bc[8] = 1
    issues = validate(p.replace(bc_status=bc))
    assert len(issues) == 1 and "8" in issues[0]


def test_father_must_be_male():
    p = Pedigree.from_members([Member(0, 1, 2, FEMALE, 30), Member(1, None, None, FEMALE, 55),
                               Member(2, None, None, FEMALE, 56)])
    issues = validate(p)
    assert len(issues) == 1 and "2" in issues[0]


def test_onset_after_current_age_and_male_ovarian_flagged():
    p = three_generation()
    onset = p.bc_onset_age.copy()
    onset[7] = 70
    assert len(validate(p.replace(bc_onset_age=onset))) == 1
    oc, oco = p.oc_status.copy(), p.oc_onset_age.copy()
    oc[8], oco[8] = 1, 40
    assert any("8" in s for s in validate(p.replace(oc_status=oc, oc_onset_age=oco)))


def test_cycle_and_marriage_loop_detected():
    p = three_generation()
    mother = p.mother.copy()
    mother[3] = 0
    assert validate(p.replace(mother=mother))
    assert find_marriage_loop(three_generation()) is None
    # the father is a son of the mother's sister: first cousins as parents
    cousins = Pedigree.from_members([
        Member(0, 1, 2, FEMALE, 30), Member(1, 3, 4, FEMALE, 55), Member(2, 5, 6, MALE, 56),
        Member(3, None, None, FEMALE, 80), Member(4, None, None, MALE, 80),
        Member(5, 3, 4, FEMALE, 78), Member(6, None, None, MALE, 80),
    ])
    assert find_marriage_loop(cousins) is not None
    with pytest.raises(PedigreeError):
        require_valid(cousins)


def test_classification_up_to_degree_two():
    p = three_generation()
    expected = {
        0: RelativeType.COUNSELEE, 1: RelativeType.MOTHER, 2: RelativeType.FATHER,
        3: RelativeType.MATERNAL_GRANDMOTHER, 4: RelativeType.MATERNAL_GRANDFATHER,
        5: RelativeType.PATERNAL_GRANDMOTHER, 6: RelativeType.PATERNAL_GRANDFATHER,
        7: RelativeType.MATERNAL_AUNT, 8: RelativeType.MATERNAL_UNCLE, 9: RelativeType.PATERNAL_AUNT,
        10: RelativeType.SISTER, 11: RelativeType.DAUGHTER, 12: RelativeType.OTHER,
    }
    for r, q in expected.items():
        assert classify_relative(p, r) == q
    with pytest.raises(IndexError):
        classify_relative(p, 99)


def test_half_sibling_is_a_sibling():
    p = Pedigree.from_members([
        Member(0, 1, 2, FEMALE, 30), Member(1, None, None, FEMALE, 55), Member(2, None, None, MALE, 56),
        Member(3, 1, None, MALE, 25),
    ])
    assert classify_relative(p, 3) == RelativeType.BROTHER


def test_type_sex_and_degree_consistency():
    p = three_generation()
    female_types = {"mother", "sister", "daughter", "maternal_grandmother", "paternal_grandmother",
                    "maternal_aunt", "paternal_aunt"}
    for r in range(len(p)):
        q = classify_relative(p, r)
        if q.label in female_types:
            assert p.sex[r] == FEMALE
        if q != RelativeType.OTHER:
            assert relative_degree(p, r) == q.degree


def test_csv_round_trip(tmp_path):
    fams = [three_generation(), three_generation().replace(family_id="fam2"),
            Pedigree.from_members([Member(0, None, None, MALE, None)], family_id="fam3")]
    path = tmp_path / "f.csv"
    write_pedigrees(fams, path)
    back = read_pedigrees(path)
    assert back == fams
    write_pedigrees(back, tmp_path / "g.json")
    assert read_pedigrees(tmp_path / "g.json") == fams
    assert format_csv(back) == path.read_text()


def test_empty_file_and_missing_mother(tmp_path):
    assert parse_csv("") == []
    text = ("family_id,member_id,mother_id,father_id,sex,current_age,deceased,bc_status,bc_onset_age,"
            "oc_status,oc_onset_age\nA,0,,1,0,40,0,0,0,0,0\nA,1,,,1,70,0,0,0,0,0\n")
    [p] = parse_csv(text)
    assert p.mother[0] == MISSING and p.father[0] == 1


def test_parse_error_has_line_number():
    text = ("family_id,member_id,mother_id,father_id,sex,current_age,deceased,bc_status,bc_onset_age,"
            "oc_status,oc_onset_age\nA,0,,,0,40.5,0,0,0,0,0\n")
    with pytest.raises(PedigreeFormatError) as exc:
        parse_csv(text)
    assert exc.value.line == 2


def test_pedigree_is_immutable():
    p = three_generation()
    with pytest.raises(ValueError):
        p.current_age[0] = 3
    assert np.array_equal(p.subset([0, 1]).mother, [1, MISSING])
