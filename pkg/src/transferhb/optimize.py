"""Polak-Ribiere nonlinear conjugate gradient with a feasibility-aware line search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
# iterations over which a decrease within rounding of f counts as a stall
STALL_WINDOW = 100


@dataclass(frozen=True)
class OptimizerConfig:
    """Solver settings.

    ``restart_period=None`` restarts with steepest descent every ``n``
    iterations, ``n`` being the problem dimension. ``block_mode="auto"``
    alternates mean/precision blocks for Gaussians and runs one joint solve
    otherwise. ``precondition`` enables diagonal preconditioning in the
    MAP drivers.
    """

    grad_tol: float = 1e-6
    max_iters: int = 2000
    restart_period: int | None = None
    initial_step: float = 1.0
    backtrack: float = 0.5
    armijo_c1: float = 1e-4
    max_line_evals: int = 60
    block_mode: str = "auto"
    outer_block_iters: int = 25
    n_starts: int = 1
    precondition: bool = True

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not 0 < self.armijo_c1 < 1:
            raise ValueError("sufficient-decrease constant must lie in (0, 1)")
        if self.block_mode not in ("auto", "joint", "alternating"):
            raise ValueError("block_mode must be auto, joint or alternating")
        if self.max_iters < 0 or self.outer_block_iters < 1 or self.n_starts < 1:
            raise ValueError("iteration counts must be positive")


@dataclass
class CGResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    status: str
    trace: list[float] = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _line_search(f, g, x, d, fx, slope, t0, cfg: OptimizerConfig, feasible):
    """Backtracking Armijo search refined by quadratic interpolation.

    Returns ``(t, f(x + t d), g(x + t d) or None)`` or ``None`` on failure.
    Infeasible trial points are treated as insufficient decrease.
    """
    t = t0
    noise = 16 * _EPS * max(1.0, abs(fx))
    dnorm = np.max(np.abs(d))
    xnorm = max(1.0, np.max(np.abs(x)))
    for _ in range(cfg.max_line_evals):
        if t * dnorm <= _EPS * xnorm:
            return None
        xt = x + t * d
        if feasible is not None and not feasible(xt):
            t *= cfg.backtrack
            continue
        ft = f(xt)
        if not np.isfinite(ft):
            t *= cfg.backtrack
            continue
        curv = ft - fx - slope * t
        tq = -slope * t * t / (2.0 * curv) if curv > 0 else None
        if ft <= fx + cfg.armijo_c1 * t * slope:
            # accepted; one extra probe at the interpolated minimizer keeps
            # steps close to exact on near-quadratic objectives
            if tq is not None and abs(tq - t) > 1e-3 * t and tq <= 10.0 * t:
                xq = x + tq * d
                if feasible is None or feasible(xq):
                    fq = f(xq)
                    if np.isfinite(fq) and fq < ft and fq <= fx + cfg.armijo_c1 * tq * slope:
                        return tq, fq, None
            return t, ft, None
        if abs(ft - fx) <= noise:
            # direct differences are at rounding level: estimate phi(t) - phi(0)
            # by Simpson's rule on directional derivatives, which keep their
            # relative precision, and track the objective by that estimate
            gt = g(xt)
            st = float(gt @ d)
            sm = float(g(x + 0.5 * t * d) @ d)
            delta = t / 6.0 * (slope + 4.0 * sm + st)
            if delta <= cfg.armijo_c1 * t * slope:
                return t, fx + delta, gt
            if st > slope:
                t = min(max(t * slope / (slope - st), 0.1 * t), 0.5 * t)
            else:
                t *= cfg.backtrack
            continue
        if tq is not None:
            t = min(max(tq, 0.1 * t), 0.5 * t)
        else:
            t *= cfg.backtrack
    return None


def cg_minimize(f: Callable[[np.ndarray], float], g: Callable[[np.ndarray], np.ndarray],
                x0, cfg: OptimizerConfig | None = None,
                feasible: Callable[[np.ndarray], bool] | None = None,
                precond: Callable[[np.ndarray], np.ndarray] | None = None) -> CGResult:
    """Minimize ``f`` by Polak-Ribiere CG.

    ``f`` may return ``inf`` outside its domain. Every accepted step keeps
    the iterate feasible and does not increase ``f``, so ``trace`` is
    non-increasing. Iteration stops once ``max|g| <= grad_tol``, after
    ``max_iters`` steps, when ``STALL_WINDOW`` consecutive steps together
    lower ``f`` by no more than its rounding level (``status="stalled"``),
    or when the line search stalls at machine precision
    along the (preconditioned) steepest-descent direction
    (``status="line search failed"``).

    ``precond(x)``, if given, returns a function applying an approximate
    inverse Hessian to a gradient; it is rebuilt at every restart.
    """
    cfg = cfg or OptimizerConfig()
    x = np.array(x0, dtype=float)
    if feasible is not None and not feasible(x):
        raise ValueError("infeasible starting point")
    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    gx = g(x)
    trace = [fx]
    n = x.size
    restart = cfg.restart_period or max(n, 1)

    if np.max(np.abs(gx), initial=0.0) <= cfg.grad_tol:
        return CGResult(x, fx, gx, 0, True, "converged", trace)

    def scaling(x):
        return None if precond is None else precond(x)

    def first_step(d):
        if precond is not None:
            return cfg.initial_step
        return cfg.initial_step / max(1.0, float(np.max(np.abs(d))))

    inv_h = scaling(x)
    z = gx if inv_h is None else inv_h(gx)
    d = -z
    prev_step = prev_slope = None
    since_restart = 0
    it = 0
    status = "max iterations"
    while it < cfg.max_iters:
        slope = float(gx @ d)
        steepest = since_restart == 0
        if slope >= 0:
            z = gx if inv_h is None else inv_h(gx)
            d = -z
            slope = -float(gx @ z)
            since_restart, steepest = 0, True
        t0 = first_step(d) if prev_step is None else min(prev_step * prev_slope / slope, 1e10)
        found = _line_search(f, g, x, d, fx, slope, t0, cfg, feasible)
        if found is None and not steepest:
            logger.debug("cg: line search failed, restarting along -grad")
            inv_h = scaling(x)
            z = gx if inv_h is None else inv_h(gx)
            d = -z
            slope = -float(gx @ z)
            since_restart = 0
            found = _line_search(f, g, x, d, fx, slope, first_step(d), cfg, feasible)
        if found is None:
            status = "line search failed"
            break
        t, fnew, gnew = found
        x = x + t * d
        if gnew is None:
            gnew = g(x)
        it += 1
        trace.append(fnew)
        prev_step, prev_slope = t, slope
        if np.max(np.abs(gnew)) <= cfg.grad_tol:
            fx, gx = fnew, gnew
            status = "converged"
            break
        if it >= STALL_WINDOW and (trace[-1 - STALL_WINDOW] - fnew
                                   <= 10 * _EPS * abs(fnew)):
            fx, gx = fnew, gnew
            status = "stalled"
            break
        since_restart += 1
        if since_restart >= restart:
            beta = 0.0
            since_restart = 0
            inv_h = scaling(x)
            znew = gnew if inv_h is None else inv_h(gnew)
        else:
            znew = gnew if inv_h is None else inv_h(gnew)
            beta = max(0.0, float(gnew @ (znew - z)) / float(gx @ z))
        d = -znew + beta * d
        fx, gx, z = fnew, gnew, znew

    converged = status == "converged"
    if not converged:
        logger.debug("cg stopped: %s after %d iterations, |g|=%.3g", status, it,
                     float(np.max(np.abs(gx))))
    return CGResult(x, fx, gx, it, converged, status, trace)
