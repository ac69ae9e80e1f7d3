"""ARUM data-generating process and brute-force oracle.

Draws populations with full counterfactual treatment and outcome schedules,
classifies every unit into its response group and class, and computes exact
population moments and group-level truths.  Moments computed here are the
ground truth every identification formula is tested against.

Reproducibility: units are generated in fixed-size chunks, each chunk from its
own counter-derived substream of the master seed, so serial and parallel runs
produce identical populations and all reductions are fixed-order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import AssumptionViolated, InvalidInput, InvalidModel
from .model import NEG_INF, ModelSpec, MomentTable, ResponseVector
from .targeting import TargetingStructure

CHUNK = 1 << 16


@dataclass(frozen=True)
class ErrorSpec:
    """Distribution of the unit-level utility errors u_it.

    Families: independent_normal (per-arm scale), correlated_normal (full
    covariance), uniform_box (per-arm interval), box_mixture (finite mixture
    of boxes; handy for carving response regions exactly), quantile (arbitrary
    transform of iid uniforms, the escape hatch for everything else).
    """

    family: str
    scale: Mapping[str, float] | None = None
    cov: tuple | None = None
    low: Mapping[str, float] | None = None
    high: Mapping[str, float] | None = None
    components: tuple | None = None
    transform: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    FAMILIES = ("independent_normal", "correlated_normal", "uniform_box",
                "box_mixture", "quantile")

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise InvalidInput(f"unknown error family {self.family!r}")

    def _vec(self, mapping, treatments, what) -> np.ndarray:
        try:
            return np.array([float(mapping[t]) for t in treatments])
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"error spec {what} must cover every treatment") from exc

    def check_continuous(self, treatments: Sequence[str]) -> None:
        """Reject mass points (degenerate coordinates) in the error law."""
        if self.family == "independent_normal":
            s = self._vec(self.scale, treatments, "scale")
            if np.any(s <= 0):
                raise AssumptionViolated("zero-variance error coordinate (mass point)")
        elif self.family == "correlated_normal":
            c = np.asarray(self.cov, dtype=float)
            if c.shape != (len(treatments), len(treatments)):
                raise InvalidInput("covariance shape must be |T| x |T|")
            if not np.allclose(c, c.T):
                raise InvalidInput("covariance must be symmetric")
            if np.any(np.diag(c) <= 0):
                raise AssumptionViolated("zero-variance error coordinate (mass point)")
            if np.min(np.linalg.eigvalsh(c)) < -1e-10:
                raise InvalidInput("covariance not positive semi-definite")
        elif self.family == "uniform_box":
            lo = self._vec(self.low, treatments, "low")
            hi = self._vec(self.high, treatments, "high")
            if np.any(hi <= lo):
                raise AssumptionViolated("zero-width uniform coordinate (mass point)")
        elif self.family == "box_mixture":
            if not self.components:
                raise InvalidInput("box_mixture needs at least one component")
            total = 0.0
            for comp in self.components:
                w = float(comp["weight"])
                if w < 0:
                    raise InvalidInput("mixture weights must be nonnegative")
                total += w
                lo = self._vec(comp["low"], treatments, "low")
                hi = self._vec(comp["high"], treatments, "high")
                if np.any(hi <= lo):
                    raise AssumptionViolated("zero-width mixture component (mass point)")
            if abs(total - 1.0) > 1e-9:
                raise InvalidInput(f"mixture weights sum to {total}, not 1")
        # quantile transforms are trusted to be absolutely continuous

    def component_means(self, treatments: Sequence[str]) -> np.ndarray:
        """Analytic mean of each error coordinate (0 where unknown)."""
        k = len(treatments)
        if self.family in ("independent_normal", "correlated_normal", "quantile"):
            return np.zeros(k)
        if self.family == "uniform_box":
            lo = self._vec(self.low, treatments, "low")
            hi = self._vec(self.high, treatments, "high")
            return (lo + hi) / 2
        mids = np.zeros(k)
        for comp in self.components:
            lo = self._vec(comp["low"], treatments, "low")
            hi = self._vec(comp["high"], treatments, "high")
            mids += float(comp["weight"]) * (lo + hi) / 2
        return mids

    def sample(self, gen: np.random.Generator, m: int, treatments: Sequence[str]) -> np.ndarray:
        k = len(treatments)
        if self.family == "independent_normal":
            return gen.standard_normal((m, k)) * self._vec(self.scale, treatments, "scale")
        if self.family == "correlated_normal":
            chol = np.linalg.cholesky(np.asarray(self.cov, dtype=float)
                                      + 1e-15 * np.eye(k))
            return gen.standard_normal((m, k)) @ chol.T
        if self.family == "uniform_box":
            lo = self._vec(self.low, treatments, "low")
            hi = self._vec(self.high, treatments, "high")
            return lo + gen.random((m, k)) * (hi - lo)
        if self.family == "box_mixture":
            w = np.array([float(c["weight"]) for c in self.components])
            lows = np.stack([self._vec(c["low"], treatments, "low") for c in self.components])
            highs = np.stack([self._vec(c["high"], treatments, "high") for c in self.components])
            comp = np.searchsorted(np.cumsum(w), gen.random(m), side="right")
            comp = np.minimum(comp, len(w) - 1)
            u = gen.random((m, k))
            return lows[comp] + u * (highs[comp] - lows[comp])
        return self.transform(gen.random((m, k)))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ErrorSpec":
        fam = doc.get("family")
        if fam == "box_mixture":
            return cls(fam, components=tuple(doc["components"]))
        return cls(fam, scale=doc.get("scale"), cov=None if doc.get("cov") is None
                   else tuple(map(tuple, doc["cov"])),
                   low=doc.get("low"), high=doc.get("high"))

    def to_dict(self) -> dict:
        out: dict = {"family": self.family}
        for k in ("scale", "low", "high"):
            v = getattr(self, k)
            if v is not None:
                out[k] = dict(v)
        if self.cov is not None:
            out["cov"] = [list(r) for r in self.cov]
        if self.components is not None:
            out["components"] = [dict(c) for c in self.components]
        return out


@dataclass(frozen=True)
class OutcomeSpec:
    """Counterfactual outcome law Y_i(t) = mu_t + loading_t (u_it - mean u_it)
    + noise * eps_i.  Zero loading on an arm makes its group means equal across
    response groups (effect homogeneity by construction); Y(t) never depends
    on the instrument."""

    mean: Mapping[str, float]
    loading: Mapping[str, float] | float = 0.0
    noise: float = 1.0

    def mu(self, treatments) -> np.ndarray:
        try:
            return np.array([float(self.mean[t]) for t in treatments])
        except (KeyError, TypeError) as exc:
            raise InvalidInput("outcome mean must cover every treatment") from exc

    def lam(self, treatments) -> np.ndarray:
        if isinstance(self.loading, Mapping):
            return np.array([float(self.loading.get(t, 0.0)) for t in treatments])
        return np.full(len(treatments), float(self.loading))

    @classmethod
    def from_dict(cls, doc: Mapping) -> "OutcomeSpec":
        return cls(mean=dict(doc["mean"]), loading=doc.get("loading", 0.0),
                   noise=float(doc.get("noise", 1.0)))

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean),
                "loading": dict(self.loading) if isinstance(self.loading, Mapping)
                else float(self.loading),
                "noise": self.noise}


@dataclass
class Population:
    """Units with full counterfactual schedules.

    Memory is n * (|T| errors + |T| outcomes + |Z| treatments) values; use
    stream_moments for populations too large to hold.
    """

    model: ModelSpec
    u: np.ndarray            # (n, |T|) utility errors
    t_cf: np.ndarray         # (n, |Z|) counterfactual treatment indices
    y_cf: np.ndarray         # (n, |T|) counterfactual outcomes
    z: np.ndarray            # (n,) realized instrument index
    seed: int
    tie_count: int

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def t(self) -> np.ndarray:
        """Realized treatment index."""
        return self.t_cf[np.arange(self.n), self.z]

    @property
    def y(self) -> np.ndarray:
        return self.y_cf[np.arange(self.n), self.t]

    def y_at_z(self) -> np.ndarray:
        """(n, |Z|) outcome each unit would realize under each instrument."""
        return np.take_along_axis(self.y_cf, self.t_cf, axis=1)

    def d_cf(self) -> np.ndarray:
        """Counterfactual filtered-treatment indices (into filter_codomain)."""
        codomain = self.model.filter_codomain
        lut = np.array([codomain.index(self.model.filter_map[t])
                        for t in self.model.treatments])
        return lut[self.t_cf]


def _z_prob_vector(model: ModelSpec, z_probs) -> np.ndarray:
    if z_probs is None:
        p = np.full(len(model.instruments), 1.0 / len(model.instruments))
    elif isinstance(z_probs, Mapping):
        p = np.array([float(z_probs[z]) for z in model.instruments])
    else:
        p = np.asarray(z_probs, dtype=float)
    if p.shape != (len(model.instruments),) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise InvalidInput("z_probs must be a probability vector over the instruments")
    return p


def _chunk_gen(seed: int, chunk_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chunk_index),))
    return np.random.Generator(np.random.Philox(ss))


def draw_population(model: ModelSpec, errors: ErrorSpec, outcomes: OutcomeSpec,
                    n: int, z_probs=None, seed: int = 0,
                    allow_degenerate: bool = False) -> Population:
    """Draw an ARUM population: T_i(z) = argmax_t U_z(t) + u_it exactly.

    Deterministic given the seed.  Floating-point argmax ties (probability
    zero under an absolutely continuous error law) are broken toward the
    lowest treatment index and counted, never silently dropped.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    if not allow_degenerate:
        errors.check_continuous(model.treatments)
    k = len(model.treatments)
    nz = len(model.instruments)
    u_mat = np.array([[model.mean_values[(z, t)] for t in model.treatments]
                      for z in model.instruments])          # (|Z|, |T|)
    pz = _z_prob_vector(model, z_probs)
    mu = outcomes.mu(model.treatments)
    lam = outcomes.lam(model.treatments)
    center = errors.component_means(model.treatments)

    u = np.empty((n, k))
    t_cf = np.empty((n, nz), dtype=np.int16)
    y_cf = np.empty((n, k))
    z = np.empty(n, dtype=np.int16)
    ties = 0
    cum = np.cumsum(pz)
    for c, start in enumerate(range(0, n, CHUNK)):
        stop = min(start + CHUNK, n)
        m = stop - start
        gen = _chunk_gen(seed, c)
        uc = errors.sample(gen, m, model.treatments)
        zu = gen.random(m)
        eps = gen.standard_normal(m)
        u[start:stop] = uc
        z[start:stop] = np.minimum(np.searchsorted(cum, zu, side="right"), nz - 1)
        y_cf[start:stop] = mu + lam * (uc - center) + outcomes.noise * eps[:, None]
        for zi in range(nz):
            util = u_mat[zi] + uc
            t_cf[start:stop, zi] = np.argmax(util, axis=1)
            top2 = np.partition(util, k - 2, axis=1)[:, k - 2:]
            ties += int(np.sum((top2[:, 0] == top2[:, 1]) & np.isfinite(top2[:, 1])))
    return Population(model, u, t_cf, y_cf, z, int(seed), ties)


def oracle_moments(pop: Population, filtered: bool = False) -> MomentTable:
    """Population-exact P(t|z) and E[Y 1(T=t)|Z=z] from the counterfactuals.

    Independent of the realized instrument draw.  With filtered=True the
    table is over the filter codomain and aggregates the treatment-level
    moments exactly.
    """
    model = pop.model
    if filtered:
        labels = model.filter_codomain
        cf = pop.d_cf()
        y_at = pop.y_at_z()
    else:
        labels = model.treatments
        cf = pop.t_cf
        y_at = None
    n = pop.n
    scores, averages = {}, {}
    for zi, zlab in enumerate(model.instruments):
        col = cf[:, zi]
        counts = np.bincount(col, minlength=len(labels))
        for ti, tlab in enumerate(labels):
            scores[(tlab, zlab)] = counts[ti] / n
            if filtered:
                averages[(tlab, zlab)] = float(np.sum(y_at[:, zi] * (col == ti)) / n)
            else:
                averages[(tlab, zlab)] = float(np.sum(pop.y_cf[:, ti] * (col == ti)) / n)
    return MomentTable(labels, model.instruments, scores, averages)


def stream_moments(model: ModelSpec, errors: ErrorSpec, outcomes: OutcomeSpec,
                   n: int, z_probs=None, seed: int = 0,
                   allow_degenerate: bool = False,
                   filtered: bool = False) -> MomentTable:
    """Accumulate oracle moments chunk by chunk without storing units.

    Produces the same values as oracle_moments(draw_population(...)) up to
    summation order for populations too large to keep in memory.
    """
    if not allow_degenerate:
        errors.check_continuous(model.treatments)
    k = len(model.treatments)
    nz = len(model.instruments)
    u_mat = np.array([[model.mean_values[(z, t)] for t in model.treatments]
                      for z in model.instruments])
    _z_prob_vector(model, z_probs)
    mu = outcomes.mu(model.treatments)
    lam = outcomes.lam(model.treatments)
    center = errors.component_means(model.treatments)
    if filtered:
        codomain = model.filter_codomain
        lut = np.array([codomain.index(model.filter_map[t]) for t in model.treatments])
        labels = codomain
    else:
        labels = model.treatments
    counts = np.zeros((nz, len(labels)))
    sums = np.zeros((nz, len(labels)))
    for c, start in enumerate(range(0, n, CHUNK)):
        m = min(start + CHUNK, n) - start
        gen = _chunk_gen(seed, c)
        uc = errors.sample(gen, m, model.treatments)
        gen.random(m)
        eps = gen.standard_normal(m)
        yc = mu + lam * (uc - center) + outcomes.noise * eps[:, None]
        for zi in range(nz):
            tz = np.argmax(u_mat[zi] + uc, axis=1)
            col = lut[tz] if filtered else tz
            counts[zi] += np.bincount(col, minlength=len(labels))
            yz = yc[np.arange(m), tz]
            sums[zi] += np.bincount(col, weights=yz, minlength=len(labels))
    scores = {(t, z): counts[zi, ti] / n
              for zi, z in enumerate(model.instruments) for ti, t in enumerate(labels)}
    averages = {(t, z): sums[zi, ti] / n
                for zi, z in enumerate(model.instruments) for ti, t in enumerate(labels)}
    return MomentTable(labels, model.instruments, scores, averages)


@dataclass
class Classification:
    """Per-unit class assignment (A_i, tau_i) plus the derived quantities of
    the top-treatment construction."""

    a_mask: np.ndarray       # (n,) bitmask over the ordered targeting instruments
    tau: np.ndarray          # (n,) treatment index of the top alternative
    v_star: np.ndarray       # (n, |Z*|) top targeted values per targeting instrument
    delta_star: np.ndarray   # (n,) top alternative value
    t_star: np.ndarray       # (n, |Z*|) top targeted treatment indices
    targeting: tuple[str, ...]
    class_names: np.ndarray  # (n,) object array of class names


def classify_units(pop: Population, ts: TargetingStructure) -> Classification:
    """Assign every unit its class c(A_i, tau_i).

    A_i collects the targeting instruments where the unit actually takes its
    top targeted treatment; tau_i maximizes the off-target value.  Requires
    strict targeting (the off-target values are not well-defined otherwise).
    """
    if not ts.verdict.strict:
        raise AssumptionViolated("classification requires strict targeting")
    tr = list(ts.treatments)
    zs = ts.targeting_ordered
    z_idx = {z: i for i, z in enumerate(ts.instruments)}
    dbar = np.array([ts.delta_bar[t] for t in tr])
    dund = np.array([ts.delta_under[t] for t in tr])

    vals = dund + pop.u                     # top alternative scores
    tau = np.argmax(vals, axis=1)
    delta_star = vals[np.arange(pop.n), tau]

    v_star = np.empty((pop.n, len(zs)))
    t_star = np.empty((pop.n, len(zs)), dtype=np.int16)
    a_mask = np.zeros(pop.n, dtype=np.int64)
    for j, zlab in enumerate(zs):
        allowed = [tr.index(t) for t in sorted(ts.t_bar[zlab], key=tr.index)]
        scores = dbar[allowed] + pop.u[:, allowed]
        pick = np.argmax(scores, axis=1)
        v_star[:, j] = scores[np.arange(pop.n), pick]
        t_star[:, j] = np.array(allowed, dtype=np.int16)[pick]
        comply = pop.t_cf[:, z_idx[zlab]] == t_star[:, j]
        a_mask |= comply.astype(np.int64) << j

    # name via the unit's elemental response vector
    names = _vector_names(pop.t_cf, ts.treatments)
    return Classification(a_mask, tau, v_star, delta_star, t_star, zs, names)


def _codes(cf: np.ndarray, n_labels: int) -> np.ndarray:
    powers = n_labels ** np.arange(cf.shape[1])
    return cf.astype(np.int64) @ powers


def _vector_names(cf: np.ndarray, labels: Sequence[str]) -> np.ndarray:
    codes = _codes(cf, len(labels))
    uniq, inv = np.unique(codes, return_inverse=True)
    names = []
    for code in uniq:
        digits = []
        c = int(code)
        for _ in range(cf.shape[1]):
            digits.append(labels[c % len(labels)])
            c //= len(labels)
        if len(set(digits)) == 1:
            names.append(f"A_{digits[0]}")
        elif all(len(d) == 1 for d in digits):
            names.append("C_" + "".join(digits))
        else:
            names.append("C_" + ",".join(digits))
    return np.array(names, dtype=object)[inv]


@dataclass
class GroupStats:
    prob: float
    count: int
    means: dict  # label -> E[Y(label) | group]; absent for empty cells


class OracleGroups:
    """Exact group-level truths over a (possibly filtered) response structure.

    ``cf`` holds per-unit counterfactual arm indices per instrument;
    ``y_at_z`` the outcome the unit realizes under each instrument; ``y_pot``
    (treatment-level only) the potential outcome per arm.
    """

    def __init__(self, cf: np.ndarray, labels: Sequence[str],
                 instruments: Sequence[str], y_at_z: np.ndarray,
                 y_pot: np.ndarray | None = None):
        self.cf = cf
        self.labels = tuple(labels)
        self.instruments = tuple(instruments)
        self.y_at_z = y_at_z
        self.y_pot = y_pot
        self.n = cf.shape[0]
        self._names = _vector_names(cf, self.labels)

    @classmethod
    def from_population(cls, pop: Population, filtered: bool = False) -> "OracleGroups":
        if filtered:
            return cls(pop.d_cf(), pop.model.filter_codomain, pop.model.instruments,
                       pop.y_at_z())
        return cls(pop.t_cf, pop.model.treatments, pop.model.instruments,
                   pop.y_at_z(), pop.y_cf)

    def names(self) -> list[str]:
        return sorted(set(self._names.tolist()))

    def mask(self, *group_names: str) -> np.ndarray:
        return np.isin(self._names, list(group_names))

    def prob(self, *group_names: str) -> float:
        return float(np.mean(self.mask(*group_names)))

    def stats(self) -> dict[str, GroupStats]:
        out = {}
        for name in self.names():
            m = self.mask(name)
            cnt = int(m.sum())
            means = {}
            if self.y_pot is not None:
                for ti, t in enumerate(self.labels):
                    means[t] = float(self.y_pot[m, ti].mean())
            out[name] = GroupStats(cnt / self.n, cnt, means)
        return out

    def mean_pot(self, t: str, *group_names: str) -> float:
        """E[Y(t) | union of groups] (treatment-level structures only)."""
        if self.y_pot is None:
            raise InvalidInput("potential-outcome means need the treatment level")
        m = self.mask(*group_names)
        if not m.any():
            raise InvalidInput(f"empty group union {group_names}")
        return float(self.y_pot[m, self.labels.index(t)].mean())

    def mean_chosen(self, z: str, *group_names: str) -> float:
        """E[Y under instrument z | union of groups]."""
        m = self.mask(*group_names)
        if not m.any():
            raise InvalidInput(f"empty group union {group_names}")
        return float(self.y_at_z[m, self.instruments.index(z)].mean())

    def contrast(self, z1: str, z0: str, *group_names: str) -> float:
        """E[Y under z1 - Y under z0 | union of groups]."""
        m = self.mask(*group_names)
        if not m.any():
            raise InvalidInput(f"empty group union {group_names}")
        i1, i0 = self.instruments.index(z1), self.instruments.index(z0)
        return float((self.y_at_z[m, i1] - self.y_at_z[m, i0]).mean())


def oracle_group_stats(pop: Population, filtered: bool = False) -> dict[str, GroupStats]:
    return OracleGroups.from_population(pop, filtered).stats()


def two_way_flows(cf: np.ndarray, labels: Sequence[str],
                  instruments: Sequence[str]) -> list[dict]:
    """Opposite switches: pairs (z, z') where some unit moves t -> t' while
    another moves t' -> t.  Exhaustive over the population via the set of
    realized (cf[z], cf[z']) patterns."""
    out = []
    nz = cf.shape[1]
    for i in range(nz):
        for j in range(i + 1, nz):
            pairs = set(map(tuple, np.unique(cf[:, [i, j]], axis=0).tolist()))
            for a, b in pairs:
                if a < b and (b, a) in pairs:
                    out.append({"z": instruments[i], "z_prime": instruments[j],
                                "t": labels[a], "t_prime": labels[b]})
    return out
