"""Identification calculus for unfiltered models.

Group probabilities, counterfactual means, LATEs, the partial-identification
interval of the 3x3 design, Wald decompositions, and the 3x3 TSLS system.
Every function takes a MomentTable (population-exact or estimated) and returns
an IdentificationReport; nothing here ever looks at micro data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import AssumptionViolated, InvalidInput, RankDeficient
from .model import MomentTable, _group_name
from .targeting import TargetingStructure, enumerate_classes

WEAK_TOL = 1e-12


@dataclass
class IdentificationReport:
    """Point-identified quantities, partial-ID intervals, testable-implication
    residuals and the provenance of every entry.

    Implication residuals are signed so that >= -tol means consistent.
    Estimands with a too-small denominator land in ``weak`` instead of
    ``point``; the rest of the report survives.
    """

    design: str
    point: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    implications: list = field(default_factory=list)
    assumptions_used: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    weak: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def add(self, name: str, value: float, provenance: str) -> None:
        self.point[name] = float(value)
        self.provenance[name] = provenance

    def ratio(self, name: str, num: float, den: float, provenance: str,
              weak_tol: float = WEAK_TOL) -> float | None:
        if abs(den) < weak_tol:
            self.weak.append(name)
            self.provenance[name] = provenance + " (suppressed: weak denominator)"
            return None
        self.add(name, num / den, provenance)
        return num / den

    def implied(self, description: str, residual: float) -> None:
        self.implications.append({"description": description,
                                  "residual": float(residual)})

    def interval(self, name: str, lo: float, hi: float, provenance: str,
                 parameter: str = "p", dependent: dict | None = None) -> None:
        if lo > hi + 1e-12:
            self.warnings.append(f"empty interval for {name}: [{lo}, {hi}]")
        self.intervals[name] = {"lo": float(lo), "hi": float(hi),
                                "parameter": parameter,
                                "dependent": dependent or {}}
        self.provenance[name] = provenance

    def merged(self, other: "IdentificationReport") -> "IdentificationReport":
        out = IdentificationReport(self.design)
        for src in (self, other):
            out.point.update(src.point)
            out.intervals.update(src.intervals)
            out.implications.extend(src.implications)
            out.assumptions_used.extend(a for a in src.assumptions_used
                                        if a not in out.assumptions_used)
            out.provenance.update(src.provenance)
            out.weak.extend(w for w in src.weak if w not in out.weak)
            out.warnings.extend(src.warnings)
        return out

    def to_dict(self) -> dict:
        return {"design": self.design, "point": dict(self.point),
                "intervals": dict(self.intervals),
                "implications": list(self.implications),
                "assumptions_used": list(self.assumptions_used),
                "provenance": dict(self.provenance), "weak": list(self.weak),
                "warnings": list(self.warnings)}


# ---------------------------------------------------------------------------
# generic identifying system

@dataclass
class IdentifyingSystem:
    """Forward map from class probabilities to propensity scores, plus the
    exact row-reduced basis of point-identified linear combinations."""

    classes: list
    cells: list              # (t, z) pairs, row order of the matrix
    matrix: list             # 0/1 rows over classes; last row is adding-up
    rank: int
    unidentified_dim: int
    identified_basis: list   # rows of the reduced system as {class: Fraction}

    def forward(self, class_probs: dict) -> dict:
        """Apply the coefficient matrix to class probabilities."""
        out = {}
        for row, cell in zip(self.matrix[:-1], self.cells):
            out[cell] = sum(c * class_probs.get(name, 0.0)
                            for c, name in zip(row, self.classes))
        return out

    def to_dict(self) -> dict:
        return {"classes": list(self.classes),
                "cells": [list(c) for c in self.cells],
                "matrix": [list(r) for r in self.matrix],
                "rank": self.rank,
                "unidentified_dim": self.unidentified_dim,
                "identified_basis": [{k: str(v) for k, v in row.items()}
                                     for row in self.identified_basis]}


def _rref(rows: list[list[Fraction]]) -> list[list[Fraction]]:
    rows = [list(r) for r in rows]
    n_cols = len(rows[0])
    pivot_row = 0
    for col in range(n_cols):
        pivot = next((r for r in range(pivot_row, len(rows)) if rows[r][col] != 0), None)
        if pivot is None:
            continue
        rows[pivot_row], rows[pivot] = rows[pivot], rows[pivot_row]
        inv = Fraction(1) / rows[pivot_row][col]
        rows[pivot_row] = [x * inv for x in rows[pivot_row]]
        for r in range(len(rows)):
            if r != pivot_row and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], rows[pivot_row])]
        pivot_row += 1
        if pivot_row == len(rows):
            break
    return [r for r in rows if any(x != 0 for x in r)]


def identifying_system(ts: TargetingStructure) -> IdentifyingSystem:
    """Coefficient matrix mapping class probabilities to P(t|z), reduced with
    exact rational arithmetic (the coefficients are always 0/1)."""
    if not (ts.verdict.strict and ts.verdict.one_to_one and ts.verdict.reference_nonempty):
        raise AssumptionViolated("identifying system requires strict one-to-one "
                                 "targeting with a reference instrument")
    classes = enumerate_classes(ts)
    names = [c.name for c in classes]
    cells = [(t, z) for z in ts.instruments for t in ts.treatments]
    z_idx = {z: i for i, z in enumerate(ts.instruments)}
    matrix = []
    for (t, z) in cells:
        matrix.append([1 if c.vector.assignment[z_idx[z]] == t else 0 for c in classes])
    matrix.append([1] * len(classes))  # probabilities sum to one

    reduced = _rref([[Fraction(x) for x in row] for row in matrix])
    rank = len(reduced)
    basis = [{name: coef for name, coef in zip(names, row) if coef != 0}
             for row in reduced]
    return IdentifyingSystem(names, cells, matrix, rank,
                             len(names) - rank, basis)


# ---------------------------------------------------------------------------
# binary instrument, T treatments

def _require(m: MomentTable, treatments=None, instruments=None) -> None:
    if treatments is not None and set(treatments) - set(m.treatments):
        raise InvalidInput(f"moment table lacks arms {set(treatments) - set(m.treatments)}")
    if instruments is not None and set(instruments) - set(m.instruments):
        raise InvalidInput(
            f"moment table lacks instruments {set(instruments) - set(m.instruments)}")


def identify_2xT_probs(m: MomentTable, targeted: str = "1", z_on: str = "1",
                       z_off: str = "0") -> IdentificationReport:
    """Group probabilities in the binary-instrument model where z_on targets
    one treatment and z_off is the reference instrument."""
    _require(m, [targeted], [z_on, z_off])
    rep = IdentificationReport("2xT")
    rep.add(f"Pr(A_{targeted})", m.p(targeted, z_off), "always-takers of the targeted arm")
    for t in m.treatments:
        if t == targeted:
            continue
        cname = _group_name((t, targeted), None)
        rep.add(f"Pr(A_{t})", m.p(t, z_on), "always-takers of an off-target arm")
        rep.add(f"Pr({cname})", m.p(t, z_off) - m.p(t, z_on),
                "compliers moving from the arm to the targeted one")
        rep.implied(f"P({t}|{z_off}) >= P({t}|{z_on})",
                    m.p(t, z_off) - m.p(t, z_on))
    return rep


def identify_2xT_means(m: MomentTable, targeted: str = "1", z_on: str = "1",
                       z_off: str = "0", weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """Counterfactual means, the Wald ratio and its decomposition weights."""
    rep = identify_2xT_probs(m, targeted, z_on, z_off)
    first_stage = m.p(targeted, z_on) - m.p(targeted, z_off)
    rep.ratio(f"E[Y({targeted})|A_{targeted}]", m.ebar(targeted, z_off),
              m.p(targeted, z_off), "always-taker mean", weak_tol)
    comp_names = []
    for t in m.treatments:
        if t == targeted:
            continue
        cname = _group_name((t, targeted), None)
        comp_names.append((t, cname))
        rep.ratio(f"E[Y({t})|A_{t}]", m.ebar(t, z_on), m.p(t, z_on),
                  "always-taker mean", weak_tol)
        rep.ratio(f"E[Y({t})|{cname}]", m.ebar(t, z_off) - m.ebar(t, z_on),
                  m.p(t, z_off) - m.p(t, z_on), "complier off-arm mean", weak_tol)
        rep.ratio(f"alpha[{t}]", m.p(t, z_off) - m.p(t, z_on), first_stage,
                  "complier decomposition weight", weak_tol)
        rep.ratio(f"share[{t}]", m.p(t, z_off) - m.p(t, z_on), first_stage,
                  "complier-type share of the pooled complier group", weak_tol)
    rep.ratio("wald", m.ey(z_on) - m.ey(z_off), first_stage,
              "instrument contrast over first stage; a positive-weighted "
              "combination of per-arm complier effects", weak_tol)
    rep.ratio(f"E[Y({targeted})|compliers]", m.ebar(targeted, z_on) - m.ebar(targeted, z_off),
              first_stage, "targeted-arm mean on the pooled complier group", weak_tol)
    return rep


def ate_2xT_homog(m: MomentTable, targeted: str = "1", z_on: str = "1",
                  z_off: str = "0", weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """Per-arm complier treatment effects under declared homogeneity of the
    targeted-arm mean across complier types."""
    _require(m, [targeted], [z_on, z_off])
    rep = IdentificationReport("2xT")
    rep.assumptions_used.append("homogeneity:targeted-arm-complier-mean")
    first_stage = m.p(targeted, z_on) - m.p(targeted, z_off)
    if abs(first_stage) < weak_tol:
        rep.weak.extend(f"LATE({targeted}-{t}|{_group_name((t, targeted), None)})"
                        for t in m.treatments if t != targeted)
        return rep
    top = (m.ebar(targeted, z_on) - m.ebar(targeted, z_off)) / first_stage
    for t in m.treatments:
        if t == targeted:
            continue
        cname = _group_name((t, targeted), None)
        den = m.p(t, z_off) - m.p(t, z_on)
        name = f"LATE({targeted}-{t}|{cname})"
        if abs(den) < weak_tol:
            rep.weak.append(name)
            continue
        rep.add(name, top - (m.ebar(t, z_off) - m.ebar(t, z_on)) / den,
                "declared homogeneity equates the targeted-arm mean across "
                "complier types")
    return rep


# ---------------------------------------------------------------------------
# the 3x3 design (labels fixed to 0/1/2; relabel the table first if needed)

_L3 = ("0", "1", "2")


def identify_3x3_probs(m: MomentTable) -> IdentificationReport:
    """Point-identified group probabilities and the interval for Pr(A_0)."""
    _require(m, _L3, _L3)
    rep = IdentificationReport("3x3")
    p = m.p
    rep.add("Pr(A_1)", p("1", "2"), "always-takers of arm 1")
    rep.add("Pr(A_2)", p("2", "1"), "always-takers of arm 2")
    rep.add("Pr(C_112)", p("1", "0") - p("1", "2"), "arm-1 keepers who switch to 2")
    rep.add("Pr(C_212)", p("2", "0") - p("2", "1"), "arm-2 keepers who switch to 1")
    rep.add("Pr(C_010+C_012)", p("0", "0") - p("0", "1"), "compliers into arm 1")
    rep.add("Pr(C_002+C_012)", p("0", "0") - p("0", "2"), "compliers into arm 2")
    rep.add("Pr(C_010+A_0)", p("0", "2"), "arm-0 stayers under z=2")

    lo = max(0.0, p("0", "1") + p("0", "2") - p("0", "0"))
    hi = min(1.0, p("0", "1"), p("0", "2"))
    rep.interval("Pr(A_0)", lo, hi, "free parameter of the partially identified block",
                 parameter="p", dependent={
                     "Pr(C_002)": {"intercept": p("0", "1"), "coef_p": -1.0},
                     "Pr(C_010)": {"intercept": p("0", "2"), "coef_p": -1.0},
                     "Pr(C_012)": {"intercept": p("0", "0") - p("0", "1") - p("0", "2"),
                                   "coef_p": 1.0}})
    rep.implied("P(1|0) >= P(1|2)", p("1", "0") - p("1", "2"))
    rep.implied("P(2|0) >= P(2|1)", p("2", "0") - p("2", "1"))
    rep.implied("P(0|0) >= P(0|1)", p("0", "0") - p("0", "1"))
    rep.implied("P(0|0) >= P(0|2)", p("0", "0") - p("0", "2"))
    return rep


def identify_3x3_means(m: MomentTable, weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """The eight point-identified counterfactual means of the 3x3 design."""
    _require(m, _L3, _L3)
    rep = IdentificationReport("3x3")
    p, e = m.p, m.ebar
    rep.ratio("E[Y(1)|A_1]", e("1", "2"), p("1", "2"), "always-taker mean", weak_tol)
    rep.ratio("E[Y(2)|A_2]", e("2", "1"), p("2", "1"), "always-taker mean", weak_tol)
    rep.ratio("E[Y(0)|C_010+C_012]", e("0", "0") - e("0", "1"),
              p("0", "0") - p("0", "1"), "untreated mean of arm-1 compliers", weak_tol)
    rep.ratio("E[Y(0)|C_002+C_012]", e("0", "0") - e("0", "2"),
              p("0", "0") - p("0", "2"), "untreated mean of arm-2 compliers", weak_tol)
    rep.ratio("E[Y(1)|C_010+C_012+C_212]", e("1", "1") - e("1", "0"),
              p("1", "1") - p("1", "0"), "treated mean, arm-1 responders", weak_tol)
    rep.ratio("E[Y(1)|C_112]", e("1", "0") - e("1", "2"),
              p("1", "0") - p("1", "2"), "treated mean of switchers 1->2", weak_tol)
    rep.ratio("E[Y(2)|C_002+C_012+C_112]", e("2", "2") - e("2", "0"),
              p("2", "2") - p("2", "0"), "treated mean, arm-2 responders", weak_tol)
    rep.ratio("E[Y(2)|C_212]", e("2", "0") - e("2", "1"),
              p("2", "0") - p("2", "1"), "treated mean of switchers 2->1", weak_tol)
    return rep


def ate_3x3_homog(m: MomentTable, which: str = "both",
                  weak_tol: float = WEAK_TOL) -> IdentificationReport:
    """Complier treatment effects under declared switcher-group homogeneity.

    'eq1' equates the arm-1 mean across the two switcher groups, 'eq2' the
    arm-2 mean.  The transfer between the switcher groups is reweighted by
    the identified ratio of their probabilities, so the estimand is exact
    whenever the declared equality holds, whatever the group sizes.
    """
    if which not in ("eq1", "eq2", "both"):
        raise InvalidInput(f"which must be eq1, eq2 or both, got {which!r}")
    _require(m, _L3, _L3)
    rep = IdentificationReport("3x3")
    p, e = m.p, m.ebar
    pr_c112 = p("1", "0") - p("1", "2")
    pr_c212 = p("2", "0") - p("2", "1")

    def switcher_mass(num, pr_src, pr_dst, name):
        # mass E[Y(arm) 1(dst-switchers)] transferred from the source group
        if abs(pr_src) < weak_tol:
            if abs(pr_dst) < weak_tol:
                return 0.0
            rep.weak.append(name)
            return None
        return num * pr_dst / pr_src

    if which in ("eq1", "both"):
        rep.assumptions_used.append("homogeneity:arm1-mean-across-switchers")
        name = "LATE(1-0|C_010+C_012)"
        transfer = switcher_mass(e("1", "0") - e("1", "2"), pr_c112, pr_c212, name)
        if transfer is not None:
            num = (e("1", "1") - e("1", "0")) - transfer + (e("0", "1") - e("0", "0"))
            rep.ratio(name, num, p("0", "0") - p("0", "1"),
                      "arm-1 complier effect under declared arm-1 homogeneity",
                      weak_tol)
    if which in ("eq2", "both"):
        rep.assumptions_used.append("homogeneity:arm2-mean-across-switchers")
        name = "LATE(2-0|C_002+C_012)"
        transfer = switcher_mass(e("2", "0") - e("2", "1"), pr_c212, pr_c112, name)
        if transfer is not None:
            num = (e("2", "2") - e("2", "0")) - transfer + (e("0", "2") - e("0", "0"))
            rep.ratio(name, num, p("0", "0") - p("0", "2"),
                      "arm-2 complier effect under declared arm-2 homogeneity",
                      weak_tol)
    if which == "both":
        name = "LATE(1-2|C_112+C_212)"
        if abs(pr_c112) < weak_tol or abs(pr_c212) < weak_tol:
            rep.weak.append(name)
        else:
            rep.add(name, (e("1", "0") - e("1", "2")) / pr_c112
                    - (e("2", "0") - e("2", "1")) / pr_c212,
                    "switcher contrast under both homogeneity declarations")
    return rep


@dataclass
class TslsResult:
    beta: dict               # arm label -> coefficient
    intercept: float | None
    matrix: list             # the 2x2 system actually solved
    rhs: list
    det: float
    method: str

    def to_dict(self) -> dict:
        return {"beta": dict(self.beta), "intercept": self.intercept,
                "matrix": [list(r) for r in self.matrix], "rhs": list(self.rhs),
                "det": self.det, "method": self.method}


def tsls_3x3_moments(m: MomentTable, rank_tol: float = 1e-10) -> TslsResult:
    """Solve the just-identified instrument moment conditions
    E[1(Z=z)(Y - b0 - b1 1(T=1) - b2 1(T=2))] = 0 for z = 0, 1, 2."""
    _require(m, _L3, _L3)
    a = np.array([[1.0, m.p("1", z), m.p("2", z)] for z in _L3])
    b = np.array([m.ey(z) for z in _L3])
    sub = a[1:, 1:] - a[0, 1:]          # partial out the intercept
    det = float(np.linalg.det(sub))
    scale = max(1e-30, float(np.max(np.abs(sub))) ** 2)
    if abs(det) < rank_tol * scale:
        raise RankDeficient(f"first-stage contrast matrix is singular (det={det})")
    beta = np.linalg.solve(a, b)
    return TslsResult({"1": float(beta[1]), "2": float(beta[2])}, float(beta[0]),
                      sub.tolist(), (b[1:] - b[0]).tolist(), det, "moments")


def tsls_3x3_system(group_probs: dict, effect_masses: dict,
                    rank_tol: float = 1e-10) -> TslsResult:
    """Assemble and solve the 2x2 group-probability system.

    ``group_probs`` needs keys C1 (= Pr of the arm-1 responder union), C2,
    C_112 and C_212; ``effect_masses`` the corresponding E[(Y(t)-Y(0)) 1(.)]
    aggregates keyed r1 and r2.  Oracle mode: the masses come from the
    simulator's group truths, not from data.
    """
    a = np.array([[group_probs["C1"], -group_probs["C_212"]],
                  [-group_probs["C_112"], group_probs["C2"]]])
    b = np.array([effect_masses["r1"], effect_masses["r2"]])
    det = float(np.linalg.det(a))
    scale = max(1e-30, float(np.max(np.abs(a))) ** 2)
    if abs(det) < rank_tol * scale:
        raise RankDeficient(f"group-probability system is singular (det={det})")
    beta = np.linalg.solve(a, b)
    return TslsResult({"1": float(beta[0]), "2": float(beta[1])}, None,
                      a.tolist(), b.tolist(), det, "system")
