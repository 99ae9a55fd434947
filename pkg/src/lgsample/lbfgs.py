"""Limited-memory BFGS with two-loop recursion and Armijo backtracking.

Built for the convex objectives in this package (logistic-regression
probes), so a plain backtracking line search is enough: it is deterministic
and accepted steps strictly decrease the objective. Curvature pairs that
would break positive-definiteness are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError

ObjectiveFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad_max: float
    iterations: int
    converged: bool
    line_search_failed: bool = False


def lbfgs_minimize(
    objective: ObjectiveFn,
    x0: np.ndarray,
    max_iterations: int = 1000,
    gradient_tolerance: float = 1e-6,
    memory: int = 10,
    armijo_c1: float = 1e-4,
    max_backtracks: int = 50,
) -> LbfgsResult:
    """Minimize ``objective`` from ``x0``.

    Stops when the gradient max-norm falls to ``gradient_tolerance`` or at
    the iteration cap, returning the best iterate seen. A failed line
    search (no Armijo decrease within ``max_backtracks`` halvings) also
    returns the best iterate, flagged, rather than raising.
    """
    if max_iterations < 1:
        raise ValidationError(f"max_iterations must be >= 1, got {max_iterations}")
    if memory < 1:
        raise ValidationError(f"memory must be >= 1, got {memory}")
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = objective(x)
    if not np.isfinite(f) or not np.isfinite(g).all():
        raise ValidationError("objective is not finite at the starting point")

    best_f, best_x = f, x.copy()
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []

    iterations = 0
    for _ in range(max_iterations):
        grad_max = float(np.abs(g).max())
        if grad_max <= gradient_tolerance:
            return LbfgsResult(best_x, best_f, grad_max, iterations, True)

        direction = -_two_loop(g, s_hist, y_hist, rho_hist)
        descent = float(g @ direction)
        if descent >= 0.0:
            # Numerically broken curvature memory; restart from steepest descent.
            s_hist.clear()
            y_hist.clear()
            rho_hist.clear()
            direction = -g
            descent = float(g @ direction)

        step = 1.0
        f_new = None
        x_new = None
        g_new = None
        for _ in range(max_backtracks):
            candidate = x + step * direction
            f_cand, g_cand = objective(candidate)
            if np.isfinite(f_cand) and f_cand <= f + armijo_c1 * step * descent:
                f_new, x_new, g_new = f_cand, candidate, g_cand
                break
            step *= 0.5
        if f_new is None:
            grad_max = float(np.abs(g).max())
            return LbfgsResult(
                best_x, best_f, grad_max, iterations, False, line_search_failed=True
            )

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        x, f, g = x_new, f_new, g_new
        iterations += 1
        if f < best_f:
            best_f, best_x = f, x.copy()

    grad_max = float(np.abs(g).max())
    return LbfgsResult(best_x, best_f, grad_max, iterations, grad_max <= gradient_tolerance)


def _two_loop(
    g: np.ndarray,
    s_hist: list[np.ndarray],
    y_hist: list[np.ndarray],
    rho_hist: list[float],
) -> np.ndarray:
    """Two-loop recursion: apply the implicit inverse Hessian to ``g``."""
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        alpha = rho * float(s @ q)
        q -= alpha * y
        alphas.append(alpha)
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        gamma = float(s @ y) / float(y @ y)
        q *= gamma
    for (s, y, rho), alpha in zip(
        zip(s_hist, y_hist, rho_hist), reversed(alphas)
    ):
        beta = rho * float(y @ q)
        q += (alpha - beta) * s
    return q
