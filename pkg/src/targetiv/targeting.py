"""Targeting structure, assumption verdicts, response-class enumeration.

The central object maps each treatment to the instrument values that maximize
its relative mean value.  Everything downstream (class enumeration, exclusion
catalogues, the identification formulas) reads off this structure.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import AssumptionViolated, InvalidInput, InvalidModel
from .model import (NEG_INF, CompositeResponseVector, ModelSpec, ResponseVector,
                    relative_means)


@dataclass(frozen=True)
class AssumptionVerdict:
    one_to_one_part_i: bool
    one_to_one_part_ii: bool
    strict: bool
    reference_nonempty: bool
    witnesses: Mapping[str, tuple] = field(default_factory=dict)

    @property
    def one_to_one(self) -> bool:
        return self.one_to_one_part_i and self.one_to_one_part_ii

    def to_dict(self) -> dict:
        return {
            "one_to_one_part_i": self.one_to_one_part_i,
            "one_to_one_part_ii": self.one_to_one_part_ii,
            "strict": self.strict,
            "reference_nonempty": self.reference_nonempty,
            "witnesses": {k: list(v) for k, v in self.witnesses.items()},
        }


@dataclass(frozen=True)
class TargetingStructure:
    treatments: tuple[str, ...]
    reference: str
    instruments: tuple[str, ...]
    delta: Mapping[tuple[str, str], float]
    delta_bar: Mapping[str, float]
    z_bar: Mapping[str, frozenset]
    t_bar: Mapping[str, frozenset]
    targeted: frozenset
    targeting: frozenset
    reference_instruments: frozenset
    delta_under: Mapping[str, float]
    verdict: AssumptionVerdict
    eps: float
    warnings: tuple[str, ...] = ()

    @property
    def targeted_ordered(self) -> tuple[str, ...]:
        return tuple(t for t in self.treatments if t in self.targeted)

    @property
    def targeting_ordered(self) -> tuple[str, ...]:
        return tuple(z for z in self.instruments if z in self.targeting)

    def z_bar_single(self, t: str) -> str:
        """The unique targeting instrument of t; requires one-to-one part (i)."""
        zs = self.z_bar[t]
        if len(zs) != 1:
            raise AssumptionViolated(f"Z-bar({t!r}) is not a singleton: {sorted(zs)}")
        return next(iter(zs))

    def t_bar_single(self, z: str) -> str:
        ts = self.t_bar[z]
        if len(ts) != 1:
            raise AssumptionViolated(f"T-bar({z!r}) is not a singleton: {sorted(ts)}")
        return next(iter(ts))

    def to_dict(self) -> dict:
        return {
            "treatments": list(self.treatments),
            "reference": self.reference,
            "instruments": list(self.instruments),
            "delta": {z: {t: self.delta[(z, t)] for t in self.treatments}
                      for z in self.instruments},
            "delta_bar": dict(self.delta_bar),
            "z_bar": {t: sorted(self.z_bar[t]) for t in self.treatments},
            "t_bar": {z: sorted(self.t_bar[z]) for z in self.instruments},
            "targeted": list(self.targeted_ordered),
            "targeting": list(self.targeting_ordered),
            "reference_instruments": [z for z in self.instruments
                                      if z in self.reference_instruments],
            "delta_under": dict(self.delta_under),
            "verdict": self.verdict.to_dict(),
            "eps": self.eps,
            "warnings": list(self.warnings),
        }


def _default_eps(delta: Mapping[tuple[str, str], float]) -> float:
    finite = [abs(v) for v in delta.values() if math.isfinite(v)]
    return 1e-9 * max(1.0, max(finite, default=1.0))


def check_one_to_one(z_bar, t_bar, targeted, targeting) -> tuple[bool, bool, dict]:
    """Parts (i) and (ii) of one-to-one targeting, with failure witnesses."""
    witnesses: dict[str, tuple] = {}
    bad_i = tuple(t for t in sorted(targeted) if len(z_bar[t]) != 1)
    bad_ii = tuple(z for z in sorted(targeting) if len(t_bar[z]) != 1)
    if bad_i:
        witnesses["one_to_one_part_i"] = bad_i
    if bad_ii:
        witnesses["one_to_one_part_ii"] = bad_ii
    return not bad_i, not bad_ii, witnesses


def check_strict(delta, instruments, treatments, targeted, z_bar, delta_bar,
                 eps) -> tuple[bool, dict, dict]:
    """Constancy of Delta_z(t) off the targeting set; returns the common values.

    Vacuously true for a targeted t when fewer than two instruments sit off
    its targeting set (in particular whenever there are only two instruments).
    """
    witnesses: dict[str, tuple] = {}
    delta_under: dict[str, float] = {}
    ok = True
    for t in treatments:
        if t not in targeted:
            delta_under[t] = delta_bar[t]
            continue
        off = [z for z in instruments if z not in z_bar[t]]
        vals = [delta[(z, t)] for z in off]
        if len(off) < 2:
            delta_under[t] = vals[0]
            continue
        finite = [v for v in vals if math.isfinite(v)]
        if len(finite) == 0:
            constant = True
        elif len(finite) < len(vals):
            constant = False
        else:
            constant = (max(finite) - min(finite)) <= eps
        if constant:
            delta_under[t] = vals[0]
        else:
            ok = False
            witnesses.setdefault("strict", tuple())
            witnesses["strict"] = witnesses["strict"] + tuple((z, t) for z in off)
    return ok, delta_under, witnesses


def derive_targeting(model: ModelSpec, eps: float | None = None) -> TargetingStructure:
    """Derive the full targeting structure from a model's relative means.

    Instruments within ``eps`` of the maximum relative mean are grouped into
    the targeting set and a warning is recorded for each genuine near-tie.
    Invariant to relabeling instruments or treatments up to the permutation.
    """
    delta = relative_means(model)
    if eps is None:
        eps = _default_eps(delta)
    if eps < 0:
        raise InvalidInput("eps must be nonnegative")

    warnings: list[str] = []
    delta_bar: dict[str, float] = {}
    z_bar: dict[str, frozenset] = {}
    for t in model.treatments:
        vals = {z: delta[(z, t)] for z in model.instruments}
        best = max(vals.values())
        if best == NEG_INF:
            raise InvalidModel(f"Delta_z({t!r}) is -inf for every z")
        delta_bar[t] = best
        top = frozenset(z for z, v in vals.items() if v >= best - eps)
        if len(top) > 1 and any(vals[z] != best for z in top):
            warnings.append(f"near-tie grouped into targeting set of t={t!r}: {sorted(top)}")
        z_bar[t] = top

    all_z = frozenset(model.instruments)
    targeted = frozenset(t for t in model.treatments if z_bar[t] != all_z)
    targeting = frozenset().union(*(z_bar[t] for t in targeted)) if targeted else frozenset()
    t_bar = {z: frozenset(t for t in targeted if z in z_bar[t]) for z in model.instruments}
    ref_instruments = all_z - targeting

    part_i, part_ii, wit1 = check_one_to_one(z_bar, t_bar, targeted, targeting)
    strict, delta_under, wit2 = check_strict(delta, model.instruments, model.treatments,
                                             targeted, z_bar, delta_bar, eps)
    witnesses = {**wit1, **wit2}
    if not ref_instruments:
        witnesses["reference_nonempty"] = tuple(sorted(targeting))
    verdict = AssumptionVerdict(part_i, part_ii, strict, bool(ref_instruments), witnesses)

    return TargetingStructure(
        model.treatments, model.reference, model.instruments, delta, delta_bar,
        {t: z_bar[t] for t in model.treatments}, t_bar, targeted, targeting,
        ref_instruments, delta_under, verdict, eps, tuple(warnings))


@dataclass(frozen=True)
class ClassSpec:
    """A response class c(A, tau): comply with the targeted treatment on A,
    take the top alternative tau elsewhere."""

    A: frozenset
    tau: str
    name: str
    vector: ResponseVector | None
    composite: CompositeResponseVector

    def to_dict(self) -> dict:
        return {
            "A": sorted(self.A),
            "tau": self.tau,
            "name": self.name,
            "vector": list(self.vector.assignment) if self.vector is not None else None,
        }


def count_classes(n_treatments: int, n_instruments: int) -> int:
    """Number of response classes when every non-reference instrument targets
    exactly one treatment."""
    if n_instruments < 2:
        raise InvalidInput("need at least 2 instrument values")
    if n_treatments < n_instruments - 1 + 1:
        raise InvalidInput("need |T| >= |Z| with one reference instrument")
    return (2 * n_treatments - n_instruments + 1) * 2 ** (n_instruments - 2)


def enumerate_classes(ts: TargetingStructure) -> list[ClassSpec]:
    """All classes c(A, tau) admissible under the structure's verdicts.

    Under one-to-one targeting each class carries its unique induced response
    vector; otherwise the within-A assignment stays set-valued and the class
    is reported with a composite vector only.
    """
    if not ts.verdict.strict:
        raise AssumptionViolated("strict targeting fails: " +
                                 str(ts.verdict.witnesses.get("strict")))
    if not ts.verdict.reference_nonempty:
        raise AssumptionViolated("no reference instruments (every z targets)")

    one_to_one = ts.verdict.one_to_one
    zstar = ts.targeting_ordered
    alternatives = tuple(t for t in ts.treatments if t not in ts.targeted)
    out: list[ClassSpec] = []
    for mask in range(2 ** len(zstar)):
        A = frozenset(z for j, z in enumerate(zstar) if mask >> j & 1)
        if one_to_one:
            taus = tuple(t for t in ts.treatments
                         if t in alternatives or ts.z_bar_single(t) in A)
        else:
            taus = tuple(t for t in ts.treatments
                         if t in alternatives or ts.z_bar[t] <= A)
        for tau in taus:
            if one_to_one:
                assignment = tuple(ts.t_bar_single(z) if z in A else tau
                                   for z in ts.instruments)
                vec = ResponseVector(ts.instruments, assignment)
                comp = CompositeResponseVector(
                    ts.instruments, ts.treatments,
                    tuple(frozenset((v,)) for v in assignment))
                name = vec.name
            else:
                comp = CompositeResponseVector(
                    ts.instruments, ts.treatments,
                    tuple(ts.t_bar[z] if z in A else frozenset((tau,))
                          for z in ts.instruments))
                vec = None
                name = f"c(A={{{','.join(sorted(A))}}},{tau})"
            out.append(ClassSpec(A, tau, name, vec, comp))
    return out


def _all_elemental(ts: TargetingStructure) -> list[ResponseVector]:
    combos = itertools.product(ts.treatments, repeat=len(ts.instruments))
    return [ResponseVector(ts.instruments, a) for a in combos]


def excluded_groups(ts: TargetingStructure, regime: str) -> list[CompositeResponseVector]:
    """Composite response groups provably empty under the given assumption regime.

    regime 'one_to_one': a unit that declines t at t's targeting instrument
    never takes t.  regime 'strict' / 'strict_one_to_one': the complement of
    the feasible class structure, returned as elemental composites.
    """
    if regime not in ("one_to_one", "strict", "strict_one_to_one"):
        raise InvalidInput(f"unknown regime {regime!r}")
    idx = {z: i for i, z in enumerate(ts.instruments)}

    if regime == "one_to_one":
        if not ts.verdict.one_to_one:
            raise AssumptionViolated("one-to-one targeting fails: " +
                                     str(ts.verdict.witnesses))
        full = frozenset(ts.treatments)
        out = []
        for t in ts.targeted_ordered:
            zt = ts.z_bar_single(t)
            for z in ts.instruments:
                if z == zt:
                    continue
                assignment = [full] * len(ts.instruments)
                assignment[idx[zt]] = frozenset((ts.reference,))
                assignment[idx[z]] = frozenset((t,))
                out.append(CompositeResponseVector(ts.instruments, ts.treatments,
                                                   tuple(assignment)))
        return out

    if regime == "strict_one_to_one":
        classes = enumerate_classes(ts)
        if not ts.verdict.one_to_one:
            raise AssumptionViolated("one-to-one targeting fails")
        allowed = {c.vector.assignment for c in classes}
        return [CompositeResponseVector(ts.instruments, ts.treatments,
                                        tuple(frozenset((t,)) for t in v.assignment))
                for v in _all_elemental(ts) if v.assignment not in allowed]

    # regime == "strict": feasibility per the class characterization without
    # one-to-one -- tau must be the common choice on the reference instruments
    # and every off-tau choice under a targeting instrument must be targeted there
    if not ts.verdict.strict or not ts.verdict.reference_nonempty:
        raise AssumptionViolated("strict targeting / reference instruments fail")
    z0 = [z for z in ts.instruments if z in ts.reference_instruments]
    out = []
    for v in _all_elemental(ts):
        choices = {z: v.assignment[idx[z]] for z in ts.instruments}
        taus = {choices[z] for z in z0}
        feasible = False
        if len(taus) == 1:
            tau = next(iter(taus))
            feasible = all(choices[z] == tau or choices[z] in ts.t_bar[z]
                           for z in ts.targeting_ordered)
        if not feasible:
            out.append(CompositeResponseVector(ts.instruments, ts.treatments,
                                               tuple(frozenset((t,)) for t in v.assignment)))
    return out


def expand_excluded(comps: list[CompositeResponseVector]) -> set[str]:
    """Distinct elemental group names covered by a list of composites."""
    names: set[str] = set()
    for c in comps:
        names.update(v.name for v in c.elemental_vectors())
    return names


def kirkeboen_equivalence_check(ts: TargetingStructure) -> tuple[bool, dict]:
    """Check that two textbook exclusion restrictions on a 3x3 design carve out
    exactly the response groups our class enumeration admits.

    The first restriction drops units that take a targeted treatment under the
    reference instrument but not under its own targeting instrument; the
    second drops units whose choice among the other treatments responds to an
    instrument that does not target either.  Returns (equal, detail).
    """
    if len(ts.treatments) != 3 or len(ts.instruments) != 3:
        raise InvalidInput("check requires a 3x3 structure")
    if not (ts.verdict.one_to_one and ts.verdict.strict and ts.verdict.reference_nonempty):
        raise AssumptionViolated("check requires strict one-to-one targeting")
    if len(ts.reference_instruments) != 1:
        raise InvalidInput("check requires a single reference instrument")

    z0 = next(iter(ts.reference_instruments))
    idx = {z: i for i, z in enumerate(ts.instruments)}
    all_vectors = _all_elemental(ts)

    ranked: set[str] = set()       # take t at z0 but decline it at z_bar(t)
    irrelevant: set[str] = set()   # z_bar(t) moves the choice between non-t arms
    for t in ts.targeted_ordered:
        zt = ts.z_bar_single(t)
        for v in all_vectors:
            at_ref, at_zt = v.assignment[idx[z0]], v.assignment[idx[zt]]
            if at_ref == t and at_zt != t:
                ranked.add(v.name)
            if at_ref != t and at_zt != t and at_ref != at_zt:
                irrelevant.add(v.name)

    survivors = {v.name for v in all_vectors} - ranked - irrelevant
    ours = {c.vector.name for c in enumerate_classes(ts)}
    detail = {
        "ranked_excluded": sorted(ranked),
        "irrelevance_excluded": sorted(irrelevant),
        "survivors": sorted(survivors),
        "enumerated": sorted(ours),
        "counts": {"ranked": len(ranked), "irrelevance": len(irrelevant),
                   "survivors": len(survivors), "enumerated": len(ours)},
    }
    return survivors == ours, detail
