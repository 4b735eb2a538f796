"""Pedigree files: CSV (one row per member) and JSON (array of families)."""
from __future__ import annotations

import csv
import io
import json
from collections import OrderedDict
from pathlib import Path

from .pedigree import Member, Pedigree, PedigreeError, validate

COLUMNS = ("family_id", "member_id", "mother_id", "father_id", "sex", "current_age",
           "deceased", "bc_status", "bc_onset_age", "oc_status", "oc_onset_age")
_OPTIONAL = {"mother_id", "father_id", "current_age", "bc_onset_age", "oc_onset_age"}


class PedigreeFormatError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def _parse_int(value, column, line):
    value = value.strip()
    if value == "":
        if column in _OPTIONAL:
            return None
        raise PedigreeFormatError(f"column {column} may not be empty", line)
    try:
        return int(value)
    except ValueError:
        raise PedigreeFormatError(f"column {column}: {value!r} is not an integer", line) from None


def _infer_format(path, fmt):
    if fmt:
        return fmt.lower()
    return "json" if str(path).lower().endswith(".json") else "csv"


def _member_from_record(rec, line):
    vals = {c: _parse_int(str(rec[c]) if rec[c] is not None else "", c, line)
            for c in COLUMNS if c != "family_id"}
    return Member(
        id=vals["member_id"], mother_id=vals["mother_id"], father_id=vals["father_id"],
        sex=vals["sex"], current_age=vals["current_age"], deceased=bool(vals["deceased"]),
        bc_status=vals["bc_status"], oc_status=vals["oc_status"],
        bc_onset_age=vals["bc_onset_age"], oc_onset_age=vals["oc_onset_age"],
    )


def _assemble(families, check):
    out, bad = [], []
    for fid, (members, line) in families.items():
        members = sorted(members, key=lambda m: m.id)
        try:
            ped = Pedigree.from_members(members, family_id=fid)
        except ValueError as exc:
            raise PedigreeFormatError(str(exc), line) from None
        if check:
            problems = validate(ped)
            if problems:
                bad.append(f"family {fid}: " + "; ".join(problems))
        out.append(ped)
    if bad:
        raise PedigreeError("invalid families:\n" + "\n".join(bad))
    return out


def parse_csv(text: str, check: bool = True) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return []
    missing = [c for c in COLUMNS if c not in reader.fieldnames]
    if missing:
        raise PedigreeFormatError(f"missing columns {missing}", 1)
    families = OrderedDict()
    for rec in reader:
        line = reader.line_num
        fid = rec["family_id"].strip()
        if not fid:
            raise PedigreeFormatError("empty family_id", line)
        m = _member_from_record(rec, line)
        families.setdefault(fid, ([], line))[0].append(m)
    return _assemble(families, check)


def parse_json(text: str, check: bool = True) -> list:
    if not text.strip():
        return []
    data = json.loads(text)
    families = OrderedDict()
    for i, fam in enumerate(data):
        fid = str(fam["family_id"])
        members = []
        for rec in fam["members"]:
            rec = {c: ("" if rec.get(c) is None else rec.get(c)) for c in COLUMNS if c != "family_id"}
            members.append(_member_from_record(rec, i + 1))
        families[fid] = (members, i + 1)
    return _assemble(families, check)


def read_pedigrees(path, format: str | None = None, check: bool = True) -> list:
    """Read pedigrees from ``path`` (CSV or JSON, inferred from the suffix)."""
    text = Path(path).read_text(encoding="utf-8")
    if _infer_format(path, format) == "json":
        return parse_json(text, check)
    return parse_csv(text, check)


def _row(p: Pedigree, r: int) -> dict:
    m = p.member(r)

    def opt(v):
        return "" if v is None else v

    return {
        "family_id": p.family_id, "member_id": m.id, "mother_id": opt(m.mother_id),
        "father_id": opt(m.father_id), "sex": m.sex, "current_age": opt(m.current_age),
        "deceased": int(m.deceased), "bc_status": m.bc_status, "bc_onset_age": opt(m.bc_onset_age),
        "oc_status": m.oc_status, "oc_onset_age": opt(m.oc_onset_age),
    }


def format_csv(pedigrees) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for p in pedigrees:
        for r in range(len(p)):
            w.writerow(_row(p, r))
    return buf.getvalue()


def format_json(pedigrees) -> str:
    fams = []
    for p in pedigrees:
        members = []
        for r in range(len(p)):
            row = _row(p, r)
            row.pop("family_id")
            members.append({k: (None if v == "" else v) for k, v in row.items()})
        fams.append({"family_id": p.family_id, "members": members})
    return json.dumps(fams, indent=1)


def write_pedigrees(pedigrees, path, format: str | None = None) -> None:
    text = format_json(pedigrees) if _infer_format(path, format) == "json" else format_csv(pedigrees)
    Path(path).write_text(text, encoding="utf-8")


def write_outcomes(family_ids, y0, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["family_id", "y0"])
        for fid, y in zip(family_ids, y0):
            w.writerow([fid, int(y)])


def read_outcomes(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["family_id"]: int(row["y0"]) for row in csv.DictReader(fh)}

