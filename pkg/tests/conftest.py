"""Shared data-generating processes for the test suite.

The box-mixture error laws place each mixture component strictly inside one
response region of the canonical 3x3 model, so group probabilities (and hence
every identified quantity) are known by design.
"""

import numpy as np
import pytest

from targetiv.model import ModelSpec, NEG_INF
from targetiv.simulator import ErrorSpec, OutcomeSpec, draw_population

# ---------------------------------------------------------------------------
# canonical 3x3 model: z=1 targets arm 1, z=2 targets arm 2, z=0 is reference

CANONICAL_U = {("0", "0"): 0, ("0", "1"): 1, ("0", "2"): 1,
               ("1", "0"): 0, ("1", "1"): 3, ("1", "2"): 1,
               ("2", "0"): 0, ("2", "1"): 1, ("2", "2"): 3}


def canonical_model(filter_map=None):
    return ModelSpec(treatments=("0", "1", "2"), reference="0",
                     instruments=("0", "1", "2"), mean_values=CANONICAL_U,
                     filter_map=filter_map or {"0": "0", "1": "1", "2": "2"})


ERR3 = ErrorSpec("correlated_normal",
                 cov=((2.0, 0.5, 0.3), (0.5, 2.0, 0.4), (0.3, 0.4, 2.0)))
OUT_HET = OutcomeSpec(mean={"0": 1.0, "1": 3.0, "2": -1.0},
                      loading={"0": 0.5, "1": 1.2, "2": -0.7}, noise=0.5)
# zero loadings and zero noise: group means equal potential-outcome means exactly
OUT_HOM0 = OutcomeSpec(mean={"0": 1.0, "1": 3.0, "2": -1.0}, loading=0.0, noise=0.0)
# zero loadings, shared noise: unit-level effects are constant, means still noisy
OUT_CONST = OutcomeSpec(mean={"0": 1.0, "1": 3.0, "2": -1.0}, loading=0.0, noise=0.5)

# ---------------------------------------------------------------------------
# binary-instrument model with three arms (z=1 targets arm 1)

MODEL_2XT_U = {("0", "0"): 0, ("0", "1"): 0.5, ("0", "2"): 0.8,
               ("1", "0"): 0, ("1", "1"): 2.5, ("1", "2"): 0.8}


def model_2xT():
    return ModelSpec(treatments=("0", "1", "2"), reference="0",
                     instruments=("0", "1"), mean_values=MODEL_2XT_U,
                     filter_map={"0": "0", "1": "1", "2": "2"})


# ---------------------------------------------------------------------------
# 2x4 models for the collapsing filters

MODEL_24_U = {("0", "0"): 0, ("0", "1"): 0, ("0", "2"): 0.5, ("0", "3"): 0.7,
              ("1", "0"): 0, ("1", "1"): 2, ("1", "2"): 0.5, ("1", "3"): 0.7}


def model_m1():
    return ModelSpec(treatments=("0", "1", "2", "3"), reference="0",
                     instruments=("0", "1"), mean_values=MODEL_24_U,
                     filter_map={"0": "0", "1": "1", "2": "0", "3": "0"})


def model_m3():
    return ModelSpec(treatments=("0", "1", "2", "3"), reference="0",
                     instruments=("0", "1"), mean_values=MODEL_24_U,
                     filter_map={"0": "0", "1": "1", "2": "2", "3": "2"})


ERR4 = ErrorSpec("independent_normal",
                 scale={"0": 1.3, "1": 1.1, "2": 1.0, "3": 0.9})
OUT4 = OutcomeSpec(mean={"0": 1, "1": 3, "2": 0.5, "3": -0.5},
                   loading={"0": 0.4, "1": 1.1, "2": -0.3, "3": 0.6}, noise=0.5)

# pooled treated arms share the same outcome equation, so the filtered
# potential outcome is well-defined at the unit level
OUT_EQ = OutcomeSpec(mean={"0": 1, "1": 3, "2": 3},
                     loading={"0": 0.6, "1": 0.0, "2": 0.0}, noise=0.5)


def model_3x2():
    return canonical_model(filter_map={"0": "0", "1": "1", "2": "1"})


# model where the filtered treatment can flow both ways between two
# instrument values even though the underlying treatment never does
def model_two_way():
    return ModelSpec(
        treatments=("0", "1", "2"), reference="0", instruments=("0", "1", "2"),
        mean_values={("0", "0"): 0, ("0", "1"): 0, ("0", "2"): 0,
                     ("1", "0"): 0, ("1", "1"): 1, ("1", "2"): 2,
                     ("2", "0"): 0, ("2", "1"): 3, ("2", "2"): 0},
        filter_map={"0": "0", "1": "1", "2": "1"})


# ---------------------------------------------------------------------------
# factorial 4x2: two binary encouragement components, additive utilities

def model_factorial():
    return ModelSpec(
        treatments=("0", "1", "2"), reference="0",
        instruments=("00", "10", "01", "11"),
        mean_values={("00", "0"): 0, ("00", "1"): 0, ("00", "2"): 0,
                     ("10", "0"): 0, ("10", "1"): 2, ("10", "2"): 0,
                     ("01", "0"): 0, ("01", "1"): 0, ("01", "2"): 2,
                     ("11", "0"): 0, ("11", "1"): 2, ("11", "2"): 2},
        filter_map={"0": "0", "1": "1", "2": "1"})


def factorial_box(w_never=0.4, w_second=0.1, w_first=0.2, w_eager=0.1,
                  w_always=0.2):
    def box(xl, xh, yl, yh, w):
        return {"weight": w, "low": {"0": -0.05, "1": xl, "2": yl},
                "high": {"0": 0.05, "1": xh, "2": yh}}
    return ErrorSpec("box_mixture", components=(
        box(-4, -3, -4, -3, w_never),
        box(-4, -3, -1.5, -0.5, w_second),
        box(-1.5, -0.5, -4, -3, w_first),
        box(-1.5, -0.5, -1.5, -0.5, w_eager),
        box(0.5, 1.5, -6, -5, w_always)))


# ---------------------------------------------------------------------------
# one-sided sign-up: nobody can take a treated arm without the first offer

def model_star():
    return ModelSpec(
        treatments=("0", "s", "b"), reference="0", instruments=("0", "10", "11"),
        mean_values={("0", "0"): 0, ("0", "s"): NEG_INF, ("0", "b"): NEG_INF,
                     ("10", "0"): 0, ("10", "s"): 1.0, ("10", "b"): NEG_INF,
                     ("11", "0"): 0, ("11", "s"): 1.0, ("11", "b"): 2.5},
        filter_map={"0": "0", "s": "1", "b": "1"})


ERR_STAR = ErrorSpec("correlated_normal",
                     cov=((2.0, 0.4, 0.2), (0.4, 1.5, 0.6), (0.2, 0.6, 1.5)))
OUT_STAR = OutcomeSpec(mean={"0": 1, "s": 2.2, "b": 2.2},
                       loading={"0": 0.5, "s": 0.0, "b": 0.0}, noise=0.4)

# ---------------------------------------------------------------------------
# box mixture carving the eight response regions of the canonical 3x3 model.
# With u_0 in [-.05, .05] and (u_1, u_2) in the boxes below, every component
# lies strictly inside one response region, so group probabilities equal the
# mixture weights by design.

GROUPS_3X3 = ("A_0", "A_1", "A_2", "C_002", "C_010", "C_012", "C_112", "C_212")

_BOXES_3X3 = {
    "A_0":   ((-5.0, -4.0), (-5.0, -4.0)),
    "A_1":   ((3.0, 4.0), (-5.0, -4.0)),
    "A_2":   ((-5.0, -4.0), (3.0, 4.0)),
    "C_002": ((-5.0, -4.0), (-2.5, -1.5)),
    "C_010": ((-2.5, -1.5), (-5.0, -4.0)),
    "C_012": ((-2.5, -1.5), (-2.5, -1.5)),
    "C_112": ((1.0, 1.5), (0.0, 0.5)),
    "C_212": ((0.0, 0.5), (1.0, 1.5)),
}

# response pattern (t at z=0, z=1, z=2) of each group, for analytic scores
PATTERNS_3X3 = {
    "A_0": ("0", "0", "0"), "A_1": ("1", "1", "1"), "A_2": ("2", "2", "2"),
    "C_002": ("0", "0", "2"), "C_010": ("0", "1", "0"), "C_012": ("0", "1", "2"),
    "C_112": ("1", "1", "2"), "C_212": ("2", "1", "2"),
}


def box_mixture_3x3(weights):
    """Error law whose response-group probabilities are exactly ``weights``."""
    comps = []
    for name, w in weights.items():
        (xl, xh), (yl, yh) = _BOXES_3X3[name]
        comps.append({"weight": w, "low": {"0": -0.05, "1": xl, "2": yl},
                      "high": {"0": 0.05, "1": xh, "2": yh}})
    return ErrorSpec("box_mixture", components=tuple(comps))


def true_scores_3x3(weights):
    """Analytic P(t|z) implied by ``box_mixture_3x3(weights)``."""
    p = {(t, z): 0.0 for t in ("0", "1", "2") for z in ("0", "1", "2")}
    for name, w in weights.items():
        for z, t in zip(("0", "1", "2"), PATTERNS_3X3[name]):
            p[(t, z)] += w
    return p


# interval-endpoint designs: which group is absent decides which bound binds
WEIGHTS_NO_C012 = {"A_0": 0.20, "A_1": 0.10, "A_2": 0.10, "C_002": 0.15,
                   "C_010": 0.15, "C_112": 0.15, "C_212": 0.15}
WEIGHTS_NO_C010 = {"A_0": 0.20, "A_1": 0.10, "A_2": 0.10, "C_002": 0.15,
                   "C_012": 0.15, "C_112": 0.15, "C_212": 0.15}
WEIGHTS_NO_A0 = {"A_1": 0.15, "A_2": 0.15, "C_002": 0.15, "C_010": 0.15,
                 "C_012": 0.15, "C_112": 0.15, "C_212": 0.10}
WEIGHTS_NO_SWITCHERS = {"A_0": 0.20, "A_1": 0.15, "A_2": 0.15, "C_002": 0.15,
                        "C_010": 0.15, "C_012": 0.20}
WEIGHTS_ALL = {"A_0": 0.15, "A_1": 0.10, "A_2": 0.10, "C_002": 0.10,
               "C_010": 0.15, "C_012": 0.15, "C_112": 0.15, "C_212": 0.10}


def random_weights_3x3(rng):
    w = rng.dirichlet(np.ones(len(GROUPS_3X3)))
    return dict(zip(GROUPS_3X3, w.tolist()))


# ---------------------------------------------------------------------------
# session-scoped populations shared across test modules

N_MODULE = 200_000


@pytest.fixture(scope="session")
def pop3_het():
    return draw_population(canonical_model(), ERR3, OUT_HET, N_MODULE, seed=11)


@pytest.fixture(scope="session")
def pop3_hom():
    return draw_population(canonical_model(), ERR3, OUT_HOM0, N_MODULE, seed=12)


@pytest.fixture(scope="session")
def pop2_het():
    return draw_population(model_2xT(), ERR3, OUT_HET, N_MODULE, seed=13)


@pytest.fixture(scope="session")
def pop2_hom():
    return draw_population(model_2xT(), ERR3, OUT_HOM0, N_MODULE, seed=14)
