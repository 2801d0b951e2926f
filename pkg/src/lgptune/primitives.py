"""Primitive set for the register machine.

Three families live here:

* protected basic functions (total on any finite input),
* tunable terminals that summarize a contiguous feature range [alpha..beta]
  through a small fitted model,
* tunable unary functions whose coefficients are adjusted against the
  training targets, plus the affine head applied to register values.

Every evaluator is vectorized over instances (rows).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, StructuralError

# Protection constants. ln is guarded near zero, exp is clamped above, and
# the power-based functions clamp the exponent of their internal e^z form so
# no primitive can overflow on its own.
LN_GUARD = 1e-12
EXP_ARG_MAX = 30.0
POW_EXP_LIMIT = 30.0
# Register values are kept inside this range; NaN collapses to 0. Chains of
# squarings/products stay finite without distorting well-scaled data.
VALUE_LIMIT = 1e150
# Coefficient box for the gradient-tuned function sites.
OMEGA_LIMIT = 3.0


def clamp_finite(values):
    """Map NaN to 0 and clip into [-VALUE_LIMIT, VALUE_LIMIT]."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = arr[None]
        return float(np.clip(np.nan_to_num(arr, nan=0.0), -VALUE_LIMIT, VALUE_LIMIT)[0])
    arr = np.nan_to_num(arr, nan=0.0, posinf=VALUE_LIMIT, neginf=-VALUE_LIMIT)
    return np.clip(arr, -VALUE_LIMIT, VALUE_LIMIT)


# ---------------------------------------------------------------------------
# basic functions


def _aq(a, b):
    # analytic quotient: smooth, total stand-in for division
    return a / np.sqrt(1.0 + b * b)


def _protected_ln(a):
    a = np.asarray(a, dtype=float)
    mag = np.abs(a)
    small = mag < LN_GUARD
    return np.where(small, 0.0, np.log(np.where(small, 1.0, mag)))


def _clamped_exp(a):
    return np.exp(np.minimum(a, EXP_ARG_MAX))


def _protected_sqrt(a):
    return np.sqrt(np.abs(a))


def _square(a):
    a = np.asarray(a, dtype=float)
    return a * a


@dataclass(frozen=True)
class BasicFunction:
    name: str
    arity: int
    fn: Callable


BASIC_FUNCTIONS = {
    f.name: f
    for f in (
        BasicFunction("add", 2, np.add),
        BasicFunction("sub", 2, np.subtract),
        BasicFunction("mul", 2, np.multiply),
        BasicFunction("aq", 2, _aq),
        BasicFunction("max", 2, np.maximum),
        BasicFunction("min", 2, np.minimum),
        BasicFunction("sin", 1, np.sin),
        BasicFunction("cos", 1, np.cos),
        BasicFunction("tanh", 1, np.tanh),
        BasicFunction("sqrt", 1, _protected_sqrt),
        BasicFunction("square", 1, _square),
        BasicFunction("exp", 1, _clamped_exp),
        BasicFunction("ln", 1, _protected_ln),
    )
}


def eval_basic(name: str, a, b=None):
    """Apply one protected basic function elementwise."""
    try:
        spec = BASIC_FUNCTIONS[name]
    except KeyError:
        raise StructuralError(f"unknown basic function '{name}'") from None
    if spec.arity == 1:
        return spec.fn(np.asarray(a, dtype=float))
    if b is None:
        raise StructuralError(f"'{name}' is binary but got one operand")
    return spec.fn(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


# ---------------------------------------------------------------------------
# tunable terminals

TERMINAL_KINDS = (
    "LR",
    "1stDLR",
    "Avg",
    "Std",
    "Fluctuate",
    "NegSlope",
    "PosSlope",
    "Peak",
    "Valley",
    "PeakLoc",
)
GAMMA_KINDS = TERMINAL_KINDS[2:]
FUNCTION_KINDS = ("LRF", "SinRF", "ExpoRF", "PowRF")
GD_FUNCTION_KINDS = ("SinRF", "ExpoRF", "PowRF")

# kinds built on successive differences need at least two features
_DIFF_KINDS = frozenset({"1stDLR", "Fluctuate", "NegSlope", "PosSlope"})


def min_range_width(kind: str) -> int:
    """Smallest legal feature-range width for a terminal kind."""
    return 2 if kind in _DIFF_KINDS else 1


def gamma_values(kind: str, slices, alpha: int = 0):
    """Range statistic per row of `slices` (one row = one instance's range).

    Std uses the population divisor. The slope statistics average the
    clipped successive differences; Fluctuate averages their magnitudes.
    PeakLoc reports the absolute feature index alpha + argmax (ties take
    the lowest index).
    """
    s = np.atleast_2d(np.asarray(slices, dtype=float))
    if kind == "Avg":
        return s.mean(axis=1)
    if kind == "Std":
        return s.std(axis=1)
    if kind == "Peak":
        return s.max(axis=1)
    if kind == "Valley":
        return s.min(axis=1)
    if kind == "PeakLoc":
        return alpha + np.argmax(s, axis=1).astype(float)
    if kind in _DIFF_KINDS and kind != "1stDLR":
        if s.shape[1] < 2:
            raise StructuralError(f"'{kind}' needs a range of width >= 2")
        d = np.diff(s, axis=1)
        if kind == "Fluctuate":
            return np.abs(d).mean(axis=1)
        if kind == "NegSlope":
            return np.minimum(d, 0.0).mean(axis=1)
        if kind == "PosSlope":
            return np.maximum(d, 0.0).mean(axis=1)
    raise StructuralError(f"unknown range statistic '{kind}'")


def gamma_eval(kind: str, values, alpha: int = 0) -> float:
    """Scalar form of `gamma_values` for a single feature range."""
    return float(gamma_values(kind, np.asarray(values, dtype=float)[None, :], alpha)[0])


def coeff_length(kind: str, alpha: int = 0, beta: int = 0) -> int:
    """Coefficient-vector length a primitive state of `kind` must carry."""
    width = beta - alpha + 1
    if kind == "LR":
        return width + 1
    if kind == "1stDLR":
        return width
    if kind in GAMMA_KINDS:
        return 2
    if kind == "SinRF":
        return 4
    if kind in ("LRF", "ExpoRF", "PowRF"):
        return 2
    raise StructuralError(f"unknown tunable kind '{kind}'")


def terminal_values(state, X):
    """Evaluate a tunable terminal on every row of X.

    LR fits an affine map of the raw range, 1stDLR of its successive
    differences; the remaining kinds apply w0 + w1 * statistic.
    """
    X = np.asarray(X, dtype=float)
    s = X[:, state.alpha : state.beta + 1]
    w = state.coeffs
    if state.kind == "LR":
        return w[0] + s @ w[1:]
    if state.kind == "1stDLR":
        return w[0] + np.diff(s, axis=1) @ w[1:]
    return w[0] + w[1] * gamma_values(state.kind, s, state.alpha)


def eval_tunable_terminal(state, x) -> float:
    """Single-instance terminal evaluation (x is one feature vector)."""
    return float(terminal_values(state, np.asarray(x, dtype=float)[None, :])[0])


# ---------------------------------------------------------------------------
# tunable functions


def bounded_power(log_base, exponent):
    """exp(clip(exponent * log_base)) — shared protected-power core."""
    return np.exp(np.clip(exponent * log_base, -POW_EXP_LIMIT, POW_EXP_LIMIT))


def abs_power(x, exponent: float):
    """|x| ** exponent with 0 ** negative protected to 0 (and 0 ** 0 = 1)."""
    ax = np.abs(np.asarray(x, dtype=float))
    tiny = ax < LN_GUARD
    logs = np.log(np.where(tiny, 1.0, ax))
    out = bounded_power(logs, exponent)
    return np.where(tiny, 1.0 if exponent == 0 else 0.0, out)


def eval_tunable_function(state, x):
    """Evaluate a tunable unary function site on scalar input values `x`.

    All kinds except LRF carry a +x residual path, so a site with neutral
    coefficients passes its input through unchanged.
    """
    x = np.asarray(x, dtype=float)
    w = state.coeffs
    if state.kind == "LRF":
        return w[0] + w[1] * x
    if state.kind == "SinRF":
        return w[0] + w[1] * np.sin(w[2] * x + w[3]) + x
    if state.kind == "ExpoRF":
        return w[0] + bounded_power(math.log1p(w[1] * w[1]), x) + x
    if state.kind == "PowRF":
        return w[0] + abs_power(x, w[1]) + x
    raise StructuralError(f"unknown tunable function '{state.kind}'")


def eval_mvlr(coeffs, register_values):
    """Affine head: coeffs[0] + register_values . coeffs[1:].

    `register_values` is either one instance (length r) or a matrix with one
    instance per row (n, r).
    """
    w = np.asarray(coeffs, dtype=float)
    f = np.asarray(register_values, dtype=float)
    expected = w.shape[0] - 1
    if f.ndim == 1:
        if f.shape[0] != expected:
            raise StructuralError(
                f"head expects {expected} register values, got {f.shape[0]}"
            )
        return float(w[0] + f @ w[1:])
    if f.shape[1] != expected:
        raise StructuralError(
            f"head expects {expected} register values, got {f.shape[1]}"
        )
    return w[0] + f @ w[1:]


# ---------------------------------------------------------------------------
# catalog


@dataclass(frozen=True)
class PrimitiveCatalog:
    """What the search is allowed to draw from for a given problem."""

    feature_count: int
    basic_functions: tuple = tuple(BASIC_FUNCTIONS)
    terminal_kinds: tuple = TERMINAL_KINDS
    function_kinds: tuple = FUNCTION_KINDS
    raw_inputs: bool = True
    cap_fraction: float = 0.5

    def __post_init__(self):
        if self.feature_count < 1:
            raise ConfigError("feature_count must be >= 1")
        if not 0.0 < self.cap_fraction <= 1.0:
            raise ConfigError("cap_fraction must lie in (0, 1]")
        for k in self.terminal_kinds:
            if k not in TERMINAL_KINDS:
                raise ConfigError(f"unknown terminal kind '{k}'")
        for k in self.function_kinds:
            if k not in FUNCTION_KINDS:
                raise ConfigError(f"unknown function kind '{k}'")
        for k in self.basic_functions:
            if k not in BASIC_FUNCTIONS:
                raise ConfigError(f"unknown basic function '{k}'")

    def max_range_width(self) -> int:
        """Terminal ranges may cover at most ceil(cap_fraction * d) features."""
        return max(1, min(self.feature_count, math.ceil(self.cap_fraction * self.feature_count)))

    def usable_terminal_kinds(self) -> tuple:
        cap = self.max_range_width()
        return tuple(k for k in self.terminal_kinds if min_range_width(k) <= cap)

    @classmethod
    def for_mode(cls, mode: str, feature_count: int) -> "PrimitiveCatalog":
        if mode == "fish":
            return cls(feature_count=feature_count, cap_fraction=0.5)
        if mode == "srbench":
            return cls(
                feature_count=feature_count,
                terminal_kinds=("LR",),
                cap_fraction=0.1,
            )
        raise ConfigError(f"unknown mode '{mode}'")
