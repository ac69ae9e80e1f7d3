"""Identification for filtered designs.

After a many-to-one filter collapses the assignment variable, instrument
monotonicity can fail at the observed level even though it holds at the
underlying level.  Each function here takes a MomentTable of filtered-level
moments and returns an IdentificationReport with whatever the filtered design
still identifies, flagging the estimands whose complier weights are lost.

Canonical filtered designs:
  binary_collapse   T arms -> {0,1}, binary instrument (arm 1 kept apart)
  ternary_collapse  T arms -> {0,1,2}, binary instrument (arms >1 pooled)
  3x2               3x3 model with both treated arms pooled into d=1
  factorial         two binary instrument components, binary d (no
                    complementarity in mean utilities)
  encouragement     one-sided sign-up design with a randomized secondary
                    encouragement among the offered (arms 0, 10, 11)
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import DesignViolated, InvalidInput
from .model import MomentTable
from .ident import WEAK_TOL, IdentificationReport, _require

DESIGNS = ("binary_collapse", "ternary_collapse", "3x2", "factorial",
           "encouragement")


def identify_filtered(m: MomentTable, design: str,
                      homogeneous: bool = False,
                      weak_tol: float = WEAK_TOL) -> IdentificationReport:
    if design == "binary_collapse":
        return identify_binary_collapse(m, homogeneous, weak_tol)
    if design == "ternary_collapse":
        return identify_ternary_collapse(m, weak_tol)
    if design == "3x2":
        return identify_3x2(m, weak_tol)
    if design == "factorial":
        return identify_factorial(m, weak_tol)
    if design == "encouragement":
        return identify_encouragement(m, weak_tol=weak_tol)
    raise InvalidInput(f"unknown filtered design {design!r}; expected one of {DESIGNS}")


def identify_binary_collapse(m: MomentTable, homogeneous: bool = False,
                             weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """Binary instrument, all arms except the targeted one pooled into d=0.

    The pooled design is monotone in d, so the standard complier calculus
    applies, but the Wald ratio mixes the kept-arm complier mean with an
    unidentified convex combination of off-arm complier means.
    """
    _require(m, ("0", "1"), ("0", "1"))
    rep = IdentificationReport("filtered:binary_collapse")
    p, e = m.p, m.ebar
    rep.add("Pr(A_1)", p("1", "0"), "always-takers of the kept arm")
    rep.add("Pr(A_0)", 1.0 - p("1", "1"), "pooled never-takers")
    rep.add("Pr(C_01)", p("1", "1") - p("1", "0"), "pooled compliers")
    rep.implied("P(1|1) >= P(1|0)", p("1", "1") - p("1", "0"))
    rep.ratio("E[Y(1)|A_1]", e("1", "0"), p("1", "0"), "always-taker mean", weak_tol)
    rep.ratio("E[Y(0)|A_0]", e("0", "1"), 1.0 - p("1", "1"), "never-taker mean", weak_tol)
    rep.ratio("E[Y(1)|C_01]", e("1", "1") - e("1", "0"), p("1", "1") - p("1", "0"),
              "kept-arm complier mean", weak_tol)
    rep.ratio("wald", m.ey("1") - m.ey("0"), p("1", "1") - p("1", "0"),
              "kept-arm complier mean minus a mixture of off-arm complier means "
              "whose weights are not identified from the pooled data", weak_tol)
    rep.warnings.append("the untreated side of 'wald' pools several underlying "
                        "arms; its decomposition weights are not identified")
    if homogeneous:
        rep.assumptions_used.append("homogeneity:off-arm-complier-means")
        if "wald" in rep.point:
            rep.add("LATE(1-0|C_01)", rep.point["wald"],
                    "wald, exact under declared off-arm homogeneity")
    return rep


def identify_ternary_collapse(m: MomentTable,
                              weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """Binary instrument, arms above the targeted one pooled into d=2.

    Arms 0 and 1 pass through the filter, so their group quantities are as in
    the unfiltered design; only the pooled arm loses its complier weights.
    """
    _require(m, ("0", "1", "2"), ("0", "1"))
    rep = IdentificationReport("filtered:ternary_collapse")
    p, e = m.p, m.ebar
    rep.add("Pr(A_0)", p("0", "1"), "arm-0 always-takers")
    rep.add("Pr(A_1)", p("1", "0"), "kept-arm always-takers")
    rep.add("Pr(A_2)", p("2", "1"), "pooled always-takers")
    rep.add("Pr(C_01)", p("0", "0") - p("0", "1"), "arm-0 compliers")
    rep.add("Pr(C_21)", p("2", "0") - p("2", "1"), "pooled compliers")
    rep.implied("P(0|0) >= P(0|1)", p("0", "0") - p("0", "1"))
    rep.implied("P(2|0) >= P(2|1)", p("2", "0") - p("2", "1"))
    first_stage = p("1", "1") - p("1", "0")
    rep.ratio("alpha[0]", p("0", "0") - p("0", "1"), first_stage,
              "weight of the arm-0 compliers in the Wald ratio", weak_tol)
    rep.ratio("E[Y(0)|A_0]", e("0", "1"), p("0", "1"), "always-taker mean", weak_tol)
    rep.ratio("E[Y(1)|A_1]", e("1", "0"), p("1", "0"), "always-taker mean", weak_tol)
    rep.ratio("E[Y(0)|C_01]", e("0", "0") - e("0", "1"), p("0", "0") - p("0", "1"),
              "arm-0 complier untreated mean", weak_tol)
    rep.ratio("E[Y(2)|C_21]", e("2", "0") - e("2", "1"), p("2", "0") - p("2", "1"),
              "pooled complier mean on the pooled arm", weak_tol)
    rep.ratio("E[Y(1)|C_01+C_21]", e("1", "1") - e("1", "0"), first_stage,
              "kept-arm mean over all compliers", weak_tol)
    rep.ratio("wald", m.ey("1") - m.ey("0"), first_stage,
              "weighted average of the arm-0 complier effect and pooled-arm "
              "effects; weights within the pooled part are not identified",
              weak_tol)
    rep.warnings.append("the pooled-arm part of 'wald' averages underlying "
                        "arms with unidentified weights")
    return rep


def identify_3x2(m: MomentTable, weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """Three-arm model under three instruments with both treated arms pooled
    into d=1.  Treated-group defiance at the pooled level is genuine two-way
    flow but harmless here: the untreated block still identifies the standard
    complier contrasts, with one free probability parameter."""
    _require(m, ("0", "1"), ("0", "1", "2"))
    rep = IdentificationReport("filtered:3x2")
    p, e = m.p, m.ebar
    rep.add("Pr(A_1)", p("1", "0"), "pooled treated always-takers")
    rep.add("Pr(C_01*)", p("0", "0") - p("0", "1"), "compliers responding to z=1")
    rep.add("Pr(C_0*1)", p("0", "0") - p("0", "2"), "compliers responding to z=2")
    rep.add("Pr(C_00*+A_0)", p("0", "1"), "untreated under z=1")
    rep.implied("P(0|0) >= P(0|1)", p("0", "0") - p("0", "1"))
    rep.implied("P(0|0) >= P(0|2)", p("0", "0") - p("0", "2"))
    lo = max(0.0, p("0", "0") - p("0", "1") - p("0", "2"))
    hi = p("0", "0") - max(p("0", "1"), p("0", "2"))
    rep.interval("Pr(C_011)", lo, hi, "free parameter of the untreated block",
                 parameter="p", dependent={
                     "Pr(C_010)": {"intercept": p("0", "0") - p("0", "1"), "coef_p": -1.0},
                     "Pr(C_001)": {"intercept": p("0", "0") - p("0", "2"), "coef_p": -1.0},
                     "Pr(A_0)": {"intercept": p("0", "1") + p("0", "2") - p("0", "0"),
                                 "coef_p": 1.0}})
    rep.ratio("E[Y(0)|C_00*+A_0]", e("0", "1"), p("0", "1"),
              "untreated mean of units untreated under z=1", weak_tol)
    rep.ratio("E[Y(0)|C_01*]", e("0", "0") - e("0", "1"), p("0", "0") - p("0", "1"),
              "untreated complier mean", weak_tol)
    rep.ratio("E[Y(1)|C_01*]", e("1", "1") - e("1", "0"), p("0", "0") - p("0", "1"),
              "treated complier mean (z=1 responders)", weak_tol)
    rep.ratio("E[Y(1)|A_1]", e("1", "0"), p("1", "0"),
              "pooled always-taker treated mean", weak_tol)
    rep.ratio("LATE(1-0|C_01*)", m.ey("1") - m.ey("0"), p("1", "1") - p("1", "0"),
              "z=1 Wald ratio; exact for z=1 responders because treated-level "
              "switching cancels in the pooled outcome", weak_tol)
    rep.ratio("LATE(1-0|C_0*1)", m.ey("2") - m.ey("0"), p("1", "2") - p("1", "0"),
              "z=2 Wald ratio, same cancellation", weak_tol)
    return rep


# factorial instrument labels: component values as two-character strings
_ZF = ("00", "10", "01", "11")


def identify_factorial(m: MomentTable, weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """Two binary instrument components, binary pooled treatment, under
    additive (no-complementarity) mean utilities and a common untreated
    hurdle.  Each component moves its own complier margin; the eager group
    (treated whenever either component is on) is identified by a
    difference-in-differences contrast."""
    _require(m, ("0", "1"), _ZF)
    rep = IdentificationReport("filtered:factorial")
    rep.assumptions_used.append("no-complementarity:mean-utilities")
    p, ey = m.p, m.ey
    rep.add("Pr(A_0)", p("0", "11"), "never-takers")
    rep.add("Pr(A_1)", p("1", "00"), "always-takers")
    rep.add("Pr(C_0011)", p("0", "10") - p("0", "11"),
            "compliers moved by the second component given the first")
    rep.add("Pr(C_0101)", p("0", "01") - p("0", "11"),
            "compliers moved by the first component given the second")
    rep.add("Pr(C_0111)", p("0", "00") + p("0", "11") - p("0", "10") - p("0", "01"),
            "eager compliers, treated whenever either component is on")
    rep.implied("P(0|10) >= P(0|11)", p("0", "10") - p("0", "11"))
    rep.implied("P(0|01) >= P(0|11)", p("0", "01") - p("0", "11"))
    rep.implied("P(0|00) + P(0|11) >= P(0|10) + P(0|01)",
                p("0", "00") + p("0", "11") - p("0", "10") - p("0", "01"))
    rep.ratio("LATE(1-0|C_0101)", ey("11") - ey("01"), p("1", "11") - p("1", "01"),
              "first-component complier effect", weak_tol)
    rep.ratio("LATE(1-0|C_0011)", ey("11") - ey("10"), p("1", "11") - p("1", "10"),
              "second-component complier effect", weak_tol)
    rep.ratio("LATE(1-0|C_0111)",
              ey("10") + ey("01") - ey("11") - ey("00"),
              p("1", "10") + p("1", "01") - p("1", "11") - p("1", "00"),
              "difference-in-differences contrast for the eager compliers",
              weak_tol)
    return rep


def identify_encouragement(m: MomentTable, design_tol: float = 0.01,
                           weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """One-sided design: control arm 0 cannot take up, offered units are
    randomized into a low (10) or high (11) encouragement.  One-sidedness is a
    design property, so violating it is an error, not a warning."""
    _require(m, ("0", "1"), ("0", "10", "11"))
    rep = IdentificationReport("filtered:encouragement")
    p, ey = m.p, m.ey
    if p("1", "0") > design_tol:
        raise DesignViolated(
            f"control arm shows take-up P(1|0)={p('1', '0'):.4f} > {design_tol}; "
            "one-sided design assumption fails")
    rep.add("Pr(A_0)", 1.0 - p("1", "11"), "never-takers")
    rep.add("Pr(C_001)", p("1", "11") - p("1", "10"),
            "takers only under the high encouragement")
    rep.add("Pr(C_011)", p("1", "10"), "takers under any offer")
    rep.implied("P(1|11) >= P(1|10)", p("1", "11") - p("1", "10"))
    rep.ratio("LATE(1-0|C_011)", ey("10") - ey("0"), p("1", "10"),
              "offer contrast scaled by take-up (no always-takers)", weak_tol)
    rep.ratio("LATE(1-0|C_001)", ey("11") - ey("10"), p("1", "11") - p("1", "10"),
              "encouragement contrast on the marginal takers", weak_tol)
    return rep


def merge_instruments(m: MomentTable, labels: Sequence[str], new_label: str,
                      weights: Mapping[str, float] | None = None) -> MomentTable:
    """Pool instrument arms into one, weighting by observed arm counts (or by
    explicit weights).  Needed when several randomized arms are equivalent by
    design, e.g. pooling never-offered arms into a single control."""
    labels = tuple(labels)
    _require(m, None, labels)
    if len(labels) < 2:
        raise InvalidInput("need at least two arms to merge")
    if new_label in set(m.instruments) - set(labels):
        raise InvalidInput(f"label {new_label!r} already used by a kept arm")
    if weights is None:
        counts = {z: (m.counts or {}).get(z, 0) for z in labels}
        total = sum(counts.values())
        if total <= 0:
            raise InvalidInput("no counts available; pass explicit weights")
        weights = {z: counts[z] / total for z in labels}
    else:
        total = sum(float(weights[z]) for z in labels)
        if total <= 0:
            raise InvalidInput("merge weights must have positive total")
        weights = {z: float(weights[z]) / total for z in labels}

    kept = [z for z in m.instruments if z not in labels]
    instruments = tuple(kept) + (new_label,)
    scores, averages = {}, {}
    for t in m.treatments:
        for z in kept:
            scores[(t, z)] = m.scores[(t, z)]
            averages[(t, z)] = m.averages[(t, z)]
        scores[(t, new_label)] = sum(weights[z] * m.scores[(t, z)] for z in labels)
        averages[(t, new_label)] = sum(weights[z] * m.averages[(t, z)] for z in labels)
    counts = None
    if m.counts is not None:
        counts = {z: m.counts[z] for z in kept if z in m.counts}
        counts[new_label] = sum(m.counts.get(z, 0) for z in labels)
    return MomentTable(m.treatments, instruments, scores, averages, counts, m.tol)
