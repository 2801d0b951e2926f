"""Coefficient fitting for tunable sites.

Linear sites (range regressions, range statistics, LRF, the head) are fit
by least squares on their design matrix; a ridge-stabilized solve takes
over when the normal equations are ill-conditioned. The nonlinear function
sites use a few normalized gradient steps with analytic partials of the
squared-error loss, keeping the best coefficients seen.

Every tuner accepts the new coefficients only if they do not increase the
site's loss, so tuning never makes a site worse on its training targets.
"""
from __future__ import annotations

import numpy as np

from . import primitives as prim
from .errors import StructuralError
from .program import Program, TunablePrimitiveState

CONDITION_LIMIT = 1e10
RIDGE_SCALE = 1e-8
GRAD_NORM_EPS = 1e-10
DEFAULT_GD_STEPS = 5
DEFAULT_GD_STEP_SIZE = 0.1


def sse(predicted, targets) -> float:
    """Sum of squared residuals (the loss every tuner minimizes)."""
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(targets, dtype=float)
    return float(np.sum((p - t) ** 2))


def solve_least_squares(design, targets) -> np.ndarray:
    """Minimize ||design @ W - targets||^2 via the normal equations.

    When the Gram matrix is singular or its condition estimate exceeds
    CONDITION_LIMIT, the solve switches to (G + lam*I) W = X'y with
    lam = RIDGE_SCALE * trace(G) / p. The result is always finite.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise StructuralError("design must be a non-empty 2-d matrix")
    if y.shape[0] != X.shape[0]:
        raise StructuralError("design and targets disagree on instance count")
    p = X.shape[1]
    with np.errstate(all="ignore"):
        gram = X.T @ X
        rhs = X.T @ y
    w = None
    if np.all(np.isfinite(gram)) and np.all(np.isfinite(rhs)):
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(gram)
        if np.isfinite(cond) and cond <= CONDITION_LIMIT:
            try:
                w = np.linalg.solve(gram, rhs)
            except np.linalg.LinAlgError:
                w = None
    if w is None or not np.all(np.isfinite(w)):
        gram_safe = np.nan_to_num(gram)
        trace = float(np.trace(gram_safe))
        lam = RIDGE_SCALE * trace / p
        if not np.isfinite(lam) or lam <= 0.0:
            lam = RIDGE_SCALE
        try:
            with np.errstate(all="ignore"):
                ridged = np.nan_to_num(gram_safe + lam * np.eye(p))
                w = np.linalg.solve(ridged, np.nan_to_num(rhs))
        except np.linalg.LinAlgError:
            w = np.zeros(p)
    if not np.all(np.isfinite(w)):
        w = np.zeros(p)
    return w


# ---------------------------------------------------------------------------
# terminals


def terminal_design(kind: str, slices, alpha: int = 0) -> np.ndarray:
    """Design matrix a terminal kind fits: intercept column plus either the
    raw range (LR), its successive differences (1stDLR), or the scalar
    range statistic."""
    s = np.atleast_2d(np.asarray(slices, dtype=float))
    ones = np.ones((s.shape[0], 1))
    if kind == "LR":
        return np.hstack([ones, s])
    if kind == "1stDLR":
        return np.hstack([ones, np.diff(s, axis=1)])
    return np.hstack([ones, prim.gamma_values(kind, s, alpha)[:, None]])


def tune_terminal(state: TunablePrimitiveState, slices, targets) -> TunablePrimitiveState:
    """Least-squares refit of a terminal site against the targets."""
    if not state.is_terminal:
        raise StructuralError(f"'{state.kind}' is not a terminal")
    y = np.asarray(targets, dtype=float)
    D = terminal_design(state.kind, slices, state.alpha)
    if D.shape[1] != state.coeffs.shape[0]:
        raise StructuralError(
            f"slice width does not match '{state.kind}' range "
            f"[{state.alpha}:{state.beta}]"
        )
    w = solve_least_squares(D, y)
    if sse(D @ w, y) <= sse(D @ state.coeffs, y):
        return state.with_coeffs(w)
    return state


# ---------------------------------------------------------------------------
# functions


def function_loss(state: TunablePrimitiveState, x, targets) -> float:
    return sse(prim.eval_tunable_function(state, x), targets)


def function_gradient(kind: str, coeffs, x, targets) -> np.ndarray:
    """Analytic dL/dw of the squared-error loss for a gradient-tuned kind."""
    w = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(targets, dtype=float)
    if kind == "SinRF":
        s = np.sin(w[2] * x + w[3])
        c = np.cos(w[2] * x + w[3])
        res = w[0] + w[1] * s + x - y
        return np.array(
            [
                2.0 * np.sum(res),
                2.0 * np.sum(res * s),
                2.0 * np.sum(res * w[1] * c * x),
                2.0 * np.sum(res * w[1] * c),
            ]
        )
    if kind == "ExpoRF":
        log_base = np.log1p(w[1] * w[1])
        res = w[0] + prim.bounded_power(log_base, x) + x - y
        pow_m1 = prim.bounded_power(log_base, x - 1.0)
        return np.array(
            [2.0 * np.sum(res), 2.0 * np.sum(res * 2.0 * w[1] * x * pow_m1)]
        )
    if kind == "PowRF":
        pw = prim.abs_power(x, w[1])
        res = w[0] + pw + x - y
        ax = np.abs(x)
        ln_x = np.where(ax < prim.LN_GUARD, 0.0, np.log(np.where(ax < prim.LN_GUARD, 1.0, ax)))
        return np.array([2.0 * np.sum(res), 2.0 * np.sum(res * pw * ln_x)])
    raise StructuralError(f"'{kind}' has no gradient tuner")


def tune_function_gd(
    state: TunablePrimitiveState,
    x,
    targets,
    steps: int = DEFAULT_GD_STEPS,
    step_size: float = DEFAULT_GD_STEP_SIZE,
) -> TunablePrimitiveState:
    """Normalized gradient descent on a nonlinear function site.

    Each step moves `step_size` along -grad/||grad||, clamps into the
    coefficient box, and stops early once the gradient norm vanishes. The
    best coefficients seen (including the starting point) are returned.
    """
    if state.kind not in prim.GD_FUNCTION_KINDS:
        raise StructuralError(f"'{state.kind}' is not gradient-tuned")
    x = np.asarray(x, dtype=float)
    y = np.asarray(targets, dtype=float)
    w = state.coeffs.copy()
    best_w = w.copy()
    best_loss = function_loss(state, x, y)
    for _ in range(steps):
        g = function_gradient(state.kind, w, x, y)
        norm = float(np.linalg.norm(g))
        if not np.isfinite(norm) or norm < GRAD_NORM_EPS:
            break
        w = np.clip(w - step_size * g / norm, -prim.OMEGA_LIMIT, prim.OMEGA_LIMIT)
        loss = function_loss(state.with_coeffs(w), x, y)
        if loss < best_loss:
            best_loss = loss
            best_w = w.copy()
    return state.with_coeffs(best_w)


def tune_lrf(state: TunablePrimitiveState, x, targets) -> TunablePrimitiveState:
    """LRF is affine in its input, so it is fit exactly by least squares."""
    if state.kind != "LRF":
        raise StructuralError(f"'{state.kind}' is not LRF")
    x = np.asarray(x, dtype=float)
    y = np.asarray(targets, dtype=float)
    D = np.column_stack([np.ones_like(x), x])
    w = solve_least_squares(D, y)
    if sse(D @ w, y) <= sse(D @ state.coeffs, y):
        return state.with_coeffs(w)
    return state


def tune_function(
    state: TunablePrimitiveState,
    x,
    targets,
    steps: int = DEFAULT_GD_STEPS,
    step_size: float = DEFAULT_GD_STEP_SIZE,
) -> TunablePrimitiveState:
    """Dispatch: LRF goes through least squares, the rest through descent."""
    if state.kind == "LRF":
        return tune_lrf(state, x, targets)
    return tune_function_gd(state, x, targets, steps=steps, step_size=step_size)


# ---------------------------------------------------------------------------
# head


def mvlr_design(register_finals, r: int) -> np.ndarray:
    finals = np.asarray(register_finals, dtype=float)
    return np.hstack([np.ones((finals.shape[1], 1)), finals[:r].T])


def tune_mvlr(program: Program, register_finals, targets) -> Program:
    """Refit the head on the final register values of one execution.

    `register_finals` is the (register_count, n) matrix an ExecutionTrace
    records (the trace object itself is also accepted). Programs without a
    head are returned unchanged.
    """
    if program.mvlr is None:
        return program
    finals = getattr(register_finals, "register_finals", register_finals)
    finals = np.asarray(finals, dtype=float)
    y = np.asarray(targets, dtype=float)
    D = mvlr_design(finals, program.mvlr_r)
    w = solve_least_squares(D, y)
    if sse(D @ w, y) <= sse(D @ program.mvlr.coeffs, y):
        return program.with_mvlr(program.mvlr.with_coeffs(w))
    return program
