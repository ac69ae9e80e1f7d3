"""Micro-data plumbing and resampling inference.

Loads delimited data, forms sample moment tables, checks instrument
relevance, and attaches bootstrap uncertainty to any identification routine.
Estimands are ratios, so confidence intervals are percentile-based rather
than normal-approximation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import InvalidInput, ParseError
from .model import ESTIMATED_TOL, MomentTable

DEFAULT_COLUMNS = {"y": "y", "arm": "arm", "z": "z",
                   "cluster": "cluster", "cell": "cell"}


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    arm: np.ndarray
    z: np.ndarray
    treatments: tuple
    instruments: tuple
    cluster: np.ndarray | None = None
    cell: np.ndarray | None = None

    def __post_init__(self):
        n = self.y.shape[0]
        for name in ("arm", "z", "cluster", "cell"):
            col = getattr(self, name)
            if col is not None and col.shape[0] != n:
                raise InvalidInput(f"column {name} has {col.shape[0]} rows, expected {n}")
        missing = set(self.instruments) - set(np.unique(self.z).tolist())
        if missing:
            raise InvalidInput(f"instrument arms never observed: {sorted(missing)}")
        stray = set(np.unique(self.arm).tolist()) - set(self.treatments)
        if stray:
            raise InvalidInput(f"arm labels outside the declared set: {sorted(stray)}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.y[idx], self.arm[idx], self.z[idx],
                       self.treatments, self.instruments,
                       None if self.cluster is None else self.cluster[idx],
                       None if self.cell is None else self.cell[idx])

    def canonical_order(self) -> np.ndarray:
        """Row permutation independent of input order, for reproducible
        resampling whatever the file's row order."""
        keys = [self.y, self.arm, self.z]
        if self.cluster is not None:
            keys.append(self.cluster)
        return np.lexsort(tuple(reversed(keys)))

    def counts_by_z(self) -> dict:
        labels, counts = np.unique(self.z, return_counts=True)
        return dict(zip(labels.tolist(), counts.tolist()))

    def split_cells(self) -> dict:
        if self.cell is None:
            return {"": self}
        return {c: self.take(np.flatnonzero(self.cell == c))
                for c in sorted(np.unique(self.cell).tolist())}

    def to_frame(self) -> pd.DataFrame:
        cols = {"y": self.y, "arm": self.arm, "z": self.z}
        if self.cluster is not None:
            cols["cluster"] = self.cluster
        if self.cell is not None:
            cols["cell"] = self.cell
        return pd.DataFrame(cols)

    def save_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


def dataset_from_population(pop, filtered: bool = False,
                            cluster: np.ndarray | None = None) -> Dataset:
    """Realized (Y, arm, Z) rows of a simulated population."""
    model = pop.model
    if filtered:
        labels = model.filter_codomain
        arm_idx = np.array([labels.index(model.filter_map[t])
                            for t in model.treatments])[pop.t]
    else:
        labels = model.treatments
        arm_idx = pop.t
    arm = np.array(labels, dtype=object)[arm_idx]
    z = np.array(model.instruments, dtype=object)[pop.z]
    return Dataset(pop.y, arm, z, tuple(labels), tuple(model.instruments),
                   cluster=cluster)


def load_dataset(path, schema: Mapping | None = None) -> Dataset:
    """Read a delimited file with named y/arm/z (and optional cluster, cell)
    columns.  Label sets default to the values present in the data."""
    schema = dict(schema or {})
    cols = {k: schema.get(k, v) for k, v in DEFAULT_COLUMNS.items()}
    try:
        frame = pd.read_csv(path, float_precision="round_trip",
                            dtype={c: str for c in
                                   (cols["arm"], cols["z"], cols["cluster"], cols["cell"])})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    for key in ("y", "arm", "z"):
        if cols[key] not in frame.columns:
            raise ParseError(f"missing required column {cols[key]!r}")

    y = pd.to_numeric(frame[cols["y"]], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise ParseError(f"non-numeric y at row {bad[0] + 2}")  # 1-based + header
    arm = frame[cols["arm"]].to_numpy(dtype=object)
    z = frame[cols["z"]].to_numpy(dtype=object)
    for name, col in (("arm", arm), ("z", z)):
        empty = np.flatnonzero(pd.isna(col) | (col == ""))
        if empty.size:
            raise ParseError(f"empty {name} at row {empty[0] + 2}")

    treatments = tuple(schema.get("treatments") or sorted(np.unique(arm).tolist()))
    instruments = tuple(schema.get("instruments") or sorted(np.unique(z).tolist()))
    unknown = set(np.unique(arm).tolist()) - set(treatments)
    if unknown:
        raise ParseError(f"unknown arm labels {sorted(unknown)}")
    unknown = set(np.unique(z).tolist()) - set(instruments)
    if unknown:
        raise ParseError(f"unknown instrument labels {sorted(unknown)}")

    cluster = cell = None
    if cols["cluster"] in frame.columns:
        cluster = frame[cols["cluster"]].to_numpy(dtype=object)
    if cols["cell"] in frame.columns:
        cell = frame[cols["cell"]].to_numpy(dtype=object)
    return Dataset(y, arm, z, treatments, instruments, cluster, cell)


def empirical_moments(d: Dataset) -> MomentTable:
    scores, averages, counts = {}, {}, {}
    for z in d.instruments:
        in_z = d.z == z
        n_z = int(in_z.sum())
        if n_z == 0:
            raise InvalidInput(f"no observations with z={z!r}")
        counts[z] = n_z
        for t in d.treatments:
            sel = in_z & (d.arm == t)
            scores[(t, z)] = float(sel.sum()) / n_z
            averages[(t, z)] = float(d.y[sel].sum()) / n_z
    return MomentTable(d.treatments, d.instruments, scores, averages, counts,
                       tol=ESTIMATED_TOL)


def check_relevance(d: Dataset, rank_tol: float = 1e-10) -> dict:
    """Numerical rank of the instrument-by-arm cross-moment matrix
    E[1(Z=z) 1(arm=t)]."""
    joint = np.zeros((len(d.instruments), len(d.treatments)))
    for i, z in enumerate(d.instruments):
        in_z = d.z == z
        for j, t in enumerate(d.treatments):
            joint[i, j] = float((in_z & (d.arm == t)).mean())
    sv = np.linalg.svd(joint, compute_uv=False)
    threshold = rank_tol * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > threshold))
    return {"singular_values": sv.tolist(), "threshold": threshold,
            "rank": rank, "full_rank": rank == min(joint.shape)}


@dataclass
class BootstrapResult:
    point: dict
    se: dict
    ci: dict                 # name -> (lo, hi)
    failures: dict           # name -> failed replicate count
    non_estimable: list
    n_replicates: int
    level: float
    seed: int
    clustered: bool
    replicates: dict = field(repr=False, default_factory=dict)

    def to_dict(self, include_replicates: bool = False) -> dict:
        out = {"point": dict(self.point), "se": dict(self.se),
               "ci": {k: list(v) for k, v in self.ci.items()},
               "failures": dict(self.failures),
               "non_estimable": list(self.non_estimable),
               "n_replicates": self.n_replicates, "level": self.level,
               "seed": self.seed, "clustered": self.clustered}
        if include_replicates:
            out["replicates"] = {k: list(v) for k, v in self.replicates.items()}
        return out


def _finite_items(values: Mapping) -> dict:
    return {k: float(v) for k, v in values.items()
            if isinstance(v, (int, float, np.floating)) and np.isfinite(v)}


def bootstrap(d: Dataset, routine: Callable[[Dataset], Mapping],
              B: int = 999, seed: int = 0, cluster: bool = False,
              workers: int = 1, level: float = 0.95) -> BootstrapResult:
    """Nonparametric bootstrap of any Dataset -> {estimand: value} routine.

    Resamples rows, or whole clusters when ``cluster`` is set, in a canonical
    row order so results do not depend on how the input file was sorted.
    Replicate b draws from the b-th spawn of the master seed, so estimates
    are identical for any worker count.  A replicate where an estimand is
    missing or non-finite counts as a failure for that estimand only.
    """
    if B < 2:
        raise InvalidInput("need at least 2 bootstrap replicates")
    if cluster and d.cluster is None:
        raise InvalidInput("cluster resampling requested but no cluster column")
    order = d.canonical_order()
    base = d.take(order)      # summation order fixed, so points are too
    point = _finite_items(routine(base))

    if cluster:
        labels = np.array(sorted(set(base.cluster.tolist())), dtype=object)
        members = {c: np.flatnonzero(base.cluster == c) for c in labels.tolist()}
    seeds = np.random.SeedSequence(seed).spawn(B)

    def one(b: int) -> dict:
        rng = np.random.Generator(np.random.Philox(seeds[b]))
        if cluster:
            picked = labels[rng.integers(0, len(labels), len(labels))]
            idx = np.concatenate([members[c] for c in picked.tolist()])
        else:
            idx = rng.integers(0, base.n, base.n)
        try:
            return _finite_items(routine(base.take(idx)))
        except Exception:
            return {}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            draws = list(pool.map(one, range(B)))
    else:
        draws = [one(b) for b in range(B)]

    names = sorted(set(point) | {k for rep in draws for k in rep})
    se, ci, failures, non_est, reps = {}, {}, {}, [], {}
    alpha = (1.0 - level) / 2 * 100
    for name in names:
        vals = np.array([rep[name] for rep in draws if name in rep])
        failures[name] = B - vals.size
        reps[name] = vals.tolist()
        if vals.size < 2:
            non_est.append(name)
            continue
        se[name] = float(np.std(vals, ddof=1))
        lo, hi = np.percentile(vals, [alpha, 100 - alpha])
        ci[name] = (float(lo), float(hi))
    return BootstrapResult(point, se, ci, failures, non_est, B, level,
                           seed, bool(cluster), reps)


def moment_routine(identify, **kwargs) -> Callable[[Dataset], dict]:
    """Adapt a MomentTable -> IdentificationReport function to the bootstrap's
    Dataset -> values interface."""
    def run(ds: Dataset) -> dict:
        rep = identify(empirical_moments(ds), **kwargs)
        out = dict(rep.point)
        for name, iv in rep.intervals.items():
            out[f"{name}.lo"] = iv["lo"]
            out[f"{name}.hi"] = iv["hi"]
        return out
    return run
