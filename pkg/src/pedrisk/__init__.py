"""Hereditary cancer risk workbench: pedigree peeling, cohort simulation, neural risk models."""

from .genetics import PenetranceModel, build_default_penetrance
from .mendelian import carrier_posterior_peeling, future_risk, score_cohort
from .pedigree import Member, Pedigree, RelativeType

__version__ = "0.1.0"

__all__ = [
    "Member", "Pedigree", "RelativeType", "PenetranceModel", "build_default_penetrance",
    "carrier_posterior_peeling", "future_risk", "score_cohort",
]
