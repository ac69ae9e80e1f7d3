"""Domain vocabulary: label sets, mean values, filter maps, response vectors, moment tables.

All types are immutable after construction and safe to share across threads.
Treatment and instrument labels are opaque strings; the reference treatment is
declared explicitly rather than inferred from position.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

from .errors import InvalidInput, InvalidModel, ParseError

NEG_INF = float("-inf")

# validation tolerances: algebraic identities vs estimated moments
EXACT_TOL = 1e-12
ESTIMATED_TOL = 1e-9


def _check_labels(labels, kind: str) -> tuple[str, ...]:
    labels = tuple(str(x) for x in labels)
    if len(labels) < 2:
        raise InvalidModel(f"{kind} set needs at least 2 labels, got {len(labels)}")
    if len(set(labels)) != len(labels):
        raise InvalidModel(f"duplicate {kind} labels: {labels}")
    return labels


def _num_from_json(v) -> float:
    if v == "-inf":
        return NEG_INF
    x = float(v)
    if math.isnan(x) or x == math.inf:
        raise InvalidModel(f"mean value must be finite or '-inf', got {v!r}")
    return x


def _num_to_json(x: float):
    return "-inf" if x == NEG_INF else x


@dataclass(frozen=True)
class ModelSpec:
    """Treatment set, instrument set, mean-value matrix and optional filter map.

    ``mean_values`` maps (z, t) to U_z(t); the sentinel NEG_INF marks a
    structurally unavailable arm under that instrument value.  U_z(reference)
    must be finite for every z.
    """

    treatments: tuple[str, ...]
    reference: str
    instruments: tuple[str, ...]
    mean_values: Mapping[tuple[str, str], float]
    filter_map: Mapping[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "treatments", _check_labels(self.treatments, "treatment"))
        object.__setattr__(self, "instruments", _check_labels(self.instruments, "instrument"))
        if self.reference not in self.treatments:
            raise InvalidModel(f"reference {self.reference!r} not in treatments")
        mv = dict(self.mean_values)
        for z in self.instruments:
            for t in self.treatments:
                if (z, t) not in mv:
                    raise InvalidModel(f"mean value missing for (z={z!r}, t={t!r})")
                v = float(mv[(z, t)])
                if math.isnan(v) or v == math.inf:
                    raise InvalidModel(f"mean value U[{z!r}][{t!r}] not finite or -inf")
                mv[(z, t)] = v
            if mv[(z, self.reference)] == NEG_INF:
                raise InvalidModel(f"U_z(reference) must be finite, got -inf at z={z!r}")
        if len(mv) != len(self.instruments) * len(self.treatments):
            extra = set(mv) - {(z, t) for z in self.instruments for t in self.treatments}
            raise InvalidModel(f"mean values defined outside Z x T: {sorted(extra)}")
        object.__setattr__(self, "mean_values", mv)
        if self.filter_map is not None:
            fm = {str(k): str(v) for k, v in self.filter_map.items()}
            if set(fm) != set(self.treatments):
                raise InvalidModel("filter map must be defined on exactly the treatment set")
            if len(set(fm.values())) < 2:
                raise InvalidModel("filter codomain needs at least 2 labels")
            object.__setattr__(self, "filter_map", fm)

    @property
    def filter_codomain(self) -> tuple[str, ...]:
        """Distinct filtered labels, ordered by first appearance in treatment order."""
        if self.filter_map is None:
            raise InvalidInput("model has no filter map")
        seen: list[str] = []
        for t in self.treatments:
            d = self.filter_map[t]
            if d not in seen:
                seen.append(d)
        return tuple(seen)

    # -- JSON round trip ---------------------------------------------------

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ModelSpec":
        try:
            treatments = list(doc["treatments"])
            reference = str(doc["reference"])
            instruments = list(doc["instruments"])
            u = doc["U"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"model spec missing field: {exc}") from exc
        mv = {}
        for z in instruments:
            row = u.get(str(z))
            if row is None:
                raise ParseError(f"U row missing for instrument {z!r}")
            for t in treatments:
                if str(t) not in row:
                    raise ParseError(f"U[{z!r}] missing treatment {t!r}")
                mv[(str(z), str(t))] = _num_from_json(row[str(t)])
        filt = doc.get("filter")
        return cls(tuple(map(str, treatments)), reference, tuple(map(str, instruments)), mv,
                   None if filt is None else dict(filt))

    def to_dict(self) -> dict:
        u = {z: {t: _num_to_json(self.mean_values[(z, t)]) for t in self.treatments}
             for z in self.instruments}
        return {
            "treatments": list(self.treatments),
            "reference": self.reference,
            "instruments": list(self.instruments),
            "U": u,
            "filter": dict(self.filter_map) if self.filter_map is not None else None,
        }

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"model spec is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def relative_means(model: ModelSpec) -> dict[tuple[str, str], float]:
    """Relative mean values Delta_z(t) = U_z(t) - U_z(t0).

    NEG_INF propagates; Delta_z(t0) = 0 for every z.  Adding any z-indexed
    constant to U leaves the result unchanged.
    """
    delta = {}
    for z in model.instruments:
        base = model.mean_values[(z, model.reference)]
        if not math.isfinite(base):
            raise InvalidModel(f"U_z(reference) non-finite at z={z!r}")
        for t in model.treatments:
            v = model.mean_values[(z, t)]
            delta[(z, t)] = NEG_INF if v == NEG_INF else v - base
    return delta


def _group_name(parts: tuple[str, ...], constant: str | None) -> str:
    # compact subscript style when every part is a single character
    if constant is not None:
        return f"A_{constant}"
    if all(len(p) == 1 for p in parts):
        return "C_" + "".join(parts)
    return "C_" + ",".join(parts)


@dataclass(frozen=True)
class ResponseVector:
    """Elemental response vector: a total map z -> t in instrument order."""

    instruments: tuple[str, ...]
    assignment: tuple[str, ...]

    def __post_init__(self):
        if len(self.assignment) != len(self.instruments):
            raise InvalidInput("assignment length must match instrument count")

    def __getitem__(self, z: str) -> str:
        return self.assignment[self.instruments.index(z)]

    @property
    def name(self) -> str:
        vals = set(self.assignment)
        constant = self.assignment[0] if len(vals) == 1 else None
        return _group_name(self.assignment, constant)


@dataclass(frozen=True)
class CompositeResponseVector:
    """Set-valued response vector; a full-treatment-set entry is a wildcard."""

    instruments: tuple[str, ...]
    treatments: tuple[str, ...]
    assignment: tuple[frozenset, ...]

    def __post_init__(self):
        if len(self.assignment) != len(self.instruments):
            raise InvalidInput("assignment length must match instrument count")
        for s in self.assignment:
            if not s:
                raise InvalidInput("composite entries must be nonempty")
            if not s <= set(self.treatments):
                raise InvalidInput(f"labels outside treatment set: {sorted(s)}")

    @property
    def is_elemental(self) -> bool:
        return all(len(s) == 1 for s in self.assignment)

    @property
    def name(self) -> str:
        full = set(self.treatments)
        parts = []
        for s in self.assignment:
            if s == full:
                parts.append("*")
            elif len(s) == 1:
                parts.append(next(iter(s)))
            else:
                parts.append("{" + "|".join(sorted(s)) + "}")
        if all(len(s) == 1 for s in self.assignment) and len({next(iter(s)) for s in self.assignment}) == 1:
            return _group_name(tuple(parts), parts[0])
        return _group_name(tuple(parts), None)

    def matches(self, r: ResponseVector) -> bool:
        return all(t in s for t, s in zip(r.assignment, self.assignment))

    def elemental_vectors(self) -> list[ResponseVector]:
        """Expand into the elemental vectors consistent with this composite."""
        out = [()]
        for s in self.assignment:
            out = [prefix + (t,) for prefix in out for t in sorted(s)]
        return [ResponseVector(self.instruments, a) for a in out]


def apply_filter_vector(r: ResponseVector, filter_map: Mapping[str, str]) -> ResponseVector:
    """Map a response vector through a filter, component-wise."""
    mapped = []
    for t in r.assignment:
        if t not in filter_map:
            raise InvalidInput(f"label {t!r} outside the filter's domain")
        mapped.append(filter_map[t])
    return ResponseVector(r.instruments, tuple(mapped))


@dataclass(frozen=True)
class MomentTable:
    """Generalized propensity scores P(t|z) and conditional averages E_z(t).

    ``averages`` stores E[Y 1(T=t) | Z=z]; row sums of ``scores`` are 1.
    ``counts`` carries per-z sample sizes when the table came from data.
    """

    treatments: tuple[str, ...]
    instruments: tuple[str, ...]
    scores: Mapping[tuple[str, str], float]
    averages: Mapping[tuple[str, str], float]
    counts: Mapping[str, int] | None = None
    tol: float = field(default=EXACT_TOL, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "scores", dict(self.scores))
        object.__setattr__(self, "averages", dict(self.averages))
        for z in self.instruments:
            total = 0.0
            for t in self.treatments:
                if (t, z) not in self.scores:
                    raise InvalidInput(f"score missing for (t={t!r}, z={z!r})")
                p = self.scores[(t, z)]
                if p < -self.tol or p > 1 + self.tol:
                    raise InvalidInput(f"P({t}|{z}) = {p} outside [0,1]")
                total += p
                if (t, z) not in self.averages:
                    raise InvalidInput(f"average missing for (t={t!r}, z={z!r})")
            if abs(total - 1.0) > max(self.tol, 1e-9 if self.counts else self.tol):
                raise InvalidInput(f"scores for z={z!r} sum to {total}, not 1")

    def p(self, t: str, z: str) -> float:
        return self.scores[(t, z)]

    def ebar(self, t: str, z: str) -> float:
        return self.averages[(t, z)]

    def ey(self, z: str) -> float:
        """E[Y | Z=z], the adding-up of the conditional averages."""
        return sum(self.averages[(t, z)] for t in self.treatments)

    def to_dict(self) -> dict:
        return {
            "treatments": list(self.treatments),
            "instruments": list(self.instruments),
            "scores": {z: {t: self.scores[(t, z)] for t in self.treatments}
                       for z in self.instruments},
            "averages": {z: {t: self.averages[(t, z)] for t in self.treatments}
                         for z in self.instruments},
            "counts": dict(self.counts) if self.counts is not None else None,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MomentTable":
        try:
            treatments = tuple(map(str, doc["treatments"]))
            instruments = tuple(map(str, doc["instruments"]))
            scores = {(t, z): float(doc["scores"][z][t])
                      for z in instruments for t in treatments}
            averages = {(t, z): float(doc["averages"][z][t])
                        for z in instruments for t in treatments}
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed moment table: {exc}") from exc
        counts = doc.get("counts")
        tol = ESTIMATED_TOL if counts else EXACT_TOL
        return cls(treatments, instruments, scores, averages,
                   None if counts is None else {str(k): int(v) for k, v in counts.items()},
                   tol=tol)

    def filtered(self, filter_map: Mapping[str, str], codomain: tuple[str, ...]) -> "MomentTable":
        """Aggregate to the filtered treatment: sums of scores and averages over M^-1(d)."""
        scores = {(d, z): 0.0 for d in codomain for z in self.instruments}
        averages = {(d, z): 0.0 for d in codomain for z in self.instruments}
        for t in self.treatments:
            d = filter_map[t]
            if d not in codomain:
                raise InvalidInput(f"filter image {d!r} outside declared codomain")
            for z in self.instruments:
                scores[(d, z)] += self.scores[(t, z)]
                averages[(d, z)] += self.averages[(t, z)]
        return MomentTable(codomain, self.instruments, scores, averages,
                           self.counts, tol=self.tol)
