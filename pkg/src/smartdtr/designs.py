"""Ready-made SMART designs: the simple 8-regime simulation trial and an
ADAPT-R-shaped HIV care retention trial with 15 embedded regimes."""

from __future__ import annotations

from .data import AllowableSetRule, KnownTable, NodeSchema, SmartDesign

__all__ = ["dgp1_design", "adaptr_design", "ADAPTR_STAGE1", "ADAPTR_STAGE2", "DESIGNS"]

ADAPTR_STAGE1 = ("SOC", "SMS", "CCT")
ADAPTR_STAGE2 = ("SOC", "SMS+CCT", "Nav", "Continue", "Discontinue")


def dgp1_design() -> SmartDesign:
    """Two initial arms; re-randomisation to {1, 2} on lapse and {3, 4} otherwise,
    all with probability one half."""
    schema = NodeSchema(
        baseline=("x1",),
        stage1_treatment="a1",
        stage1_levels=("0", "1"),
        timevarying=("l2", "s2"),
        stage2_treatment="a2",
        stage2_levels=("1", "2", "3", "4"),
        outcome="y",
        outcome_range=(0.0, 1.0),
        tailoring1=(),
        tailoring2=("l2",),
        response="l2",
        domains={"l2": (1, 0)},
    )
    rules = (
        AllowableSetRule(1, {}, ("0", "1")),
        AllowableSetRule(2, {"l2": 1}, ("1", "2")),
        AllowableSetRule(2, {"l2": 0}, ("3", "4")),
    )
    known = KnownTable(
        stage1=(({}, {"0": 0.5, "1": 0.5}),),
        stage2=(({"l2": 1}, {"1": 0.5, "2": 0.5}), ({"l2": 0}, {"3": 0.5, "4": 0.5})),
    )
    return SmartDesign(schema, rules, known)


def adaptr_design() -> SmartDesign:
    """Three initial retention strategies; lapsers are re-randomised among three
    escalations, non-lapsers on SMS/CCT between continuing and discontinuing,
    and non-lapsers on SOC continue deterministically. Death (``d2``) and
    transfer (``m2``) before stage 2 void the second randomisation."""
    schema = NodeSchema(
        baseline=("sex", "age", "alcohol"),
        stage1_treatment="a1",
        stage1_levels=ADAPTR_STAGE1,
        timevarying=("d2", "m2", "l2", "time_rerand"),
        stage2_treatment="a2",
        stage2_levels=ADAPTR_STAGE2,
        outcome="y",
        outcome_range=(0.0, 1.0),
        tailoring1=(),
        tailoring2=("a1", "l2"),
        response="l2",
        absorbing=("d2", "m2"),
        domains={"l2": (1, 0)},
    )
    rules = (
        AllowableSetRule(1, {}, ADAPTR_STAGE1),
        AllowableSetRule(2, {"l2": 1}, ("SOC", "SMS+CCT", "Nav")),
        AllowableSetRule(2, {"l2": 0, "a1": ["SMS", "CCT"]}, ("Continue", "Discontinue")),
        AllowableSetRule(2, {"l2": 0, "a1": "SOC"}, ("Continue",)),
    )
    third = 1.0 / 3.0
    known = KnownTable(
        stage1=(({}, {a: third for a in ADAPTR_STAGE1}),),
        stage2=(
            ({"l2": 1}, {"SOC": third, "SMS+CCT": third, "Nav": third}),
            ({"l2": 0, "a1": ["SMS", "CCT"]}, {"Continue": 0.5, "Discontinue": 0.5}),
            ({"l2": 0, "a1": "SOC"}, {"Continue": 1.0}),
        ),
    )
    return SmartDesign(schema, rules, known)


DESIGNS = {"dgp1": dgp1_design, "adaptr": adaptr_design}
