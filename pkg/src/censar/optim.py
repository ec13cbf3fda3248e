"""BFGS maximizer with a feasibility-aware backtracking line search."""

from dataclasses import dataclass

import numpy as np

__all__ = ["BfgsResult", "bfgs_maximize"]


@dataclass
class BfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    message: str


def bfgs_maximize(fun_grad, x0, gtol=1e-8, ftol=1e-13, xtol=1e-11, max_iter=200, max_halvings=30,
                  armijo=1e-4):
    """
    Maximize a smooth function with BFGS.

    ``fun_grad(x)`` returns ``(f, g)`` or ``None`` when ``x`` is infeasible.
    Trial points that are infeasible or fail the Armijo condition are
    rejected by halving the step, at most ``max_halvings`` times.

    Stops when the gradient is below ``gtol``, when the quasi-Newton
    predicted gain ``g' H g / 2`` drops below ``ftol * max(1, |f|)`` or when
    an accepted step is shorter than ``xtol * (1 + max|x|)``.
    """
    x = np.array(x0, dtype=float)
    res = fun_grad(x)
    if res is None:
        raise ValueError("starting point is infeasible")
    f, g = res
    n = x.size
    H = np.eye(n)
    if n == 0:
        return BfgsResult(x, f, g, 0, True, "no free parameters")
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            return BfgsResult(x, f, g, it - 1, True, "gradient below tolerance")
        p = H @ g
        slope = g @ p
        if 0 < 0.5 * slope < ftol * max(1.0, abs(f)) and it > 1:
            return BfgsResult(x, f, g, it - 1, True, "predicted gain below tolerance")
        if slope <= 0:
            # lost positive definiteness; restart along the gradient
            H = np.eye(n)
            p = g.copy()
            slope = g @ p
        step = 1.0
        # keep the first trial step moderate in parameter space
        pmax = np.max(np.abs(p))
        if pmax > 1.0:
            step = 1.0 / pmax
        accepted = None
        for _ in range(max_halvings + 1):
            x_new = x + step * p
            trial = fun_grad(x_new)
            if trial is not None and np.isfinite(trial[0]) and trial[0] >= f + armijo * step * slope:
                accepted = trial
                break
            step *= 0.5
        if accepted is None:
            return BfgsResult(x, f, g, it, False, "line search failed to find a feasible ascent step")
        f_new, g_new = accepted
        s = x_new - x
        y = g - g_new  # gradient of the negated objective
        x, g, f_old, f = x_new, g_new, f, f_new
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        if abs(f - f_old) <= ftol * max(1.0, abs(f)) and np.max(np.abs(g)) < np.sqrt(gtol):
            return BfgsResult(x, f, g, it, True, "objective change below tolerance")
        if np.max(np.abs(s)) < xtol * (1.0 + np.max(np.abs(x))):
            return BfgsResult(x, f, g, it, True, "step below tolerance")
    return BfgsResult(x, f, g, max_iter, np.max(np.abs(g)) < gtol, "maximum iterations reached")
