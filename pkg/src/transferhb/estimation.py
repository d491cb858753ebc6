"""Bootstrap DOT estimation, initialization and MAP fitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .families import GaussianFamily
from .hierarchy import Hierarchy, ParamState, layout
from .likelihoods import NotPositiveDefinite, NumericalError
from .objective import (
    DivergenceSpec,
    DotCoefficients,
    HyperpriorSpec,
    ObjectiveConfig,
    TransferProblem,
    TyingMask,
)
from .optimize import CGResult, OptimizerConfig, cg_minimize

logger = logging.getLogger(__name__)

# smoothing used only to start from a finite point when alpha = 0 gives
# zero probabilities or a singular covariance
INIT_FLOOR = 1e-2


@dataclass(frozen=True)
class BootstrapConfig:
    resamples: int = 50
    seed: int = 0
    variance_floor: float = 1e-6
    granularity: str = "coordinate"

    def __post_init__(self):
        if self.resamples < 2:
            raise ValueError("bootstrap needs at least two resamples")
        if not self.variance_floor > 0:
            raise ValueError("variance floor must be positive")
        if self.granularity not in ("coordinate", "group"):
            raise ValueError("granularity must be 'coordinate' or 'group'")


@dataclass
class FitResult:
    state: ParamState
    dot: DotCoefficients | None
    objective_value: float
    iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)
    status: str = ""
    grad_norm: float = float("nan")

    def params(self, h: Hierarchy) -> dict[str, np.ndarray]:
        """Node name -> flat parameter block."""
        idx = self.state.index
        return {h.names[n]: self.state.values[idx.node_slice(n)].copy() for n in range(h.size)}


def _subtree_stats(h: Hierarchy, family, stats: Mapping[int, object]) -> dict[int, object]:
    """Pool each node's own statistics with those of all its descendants."""
    pooled = {}
    for n in reversed(h.topological()):
        s = stats.get(n)
        acc = family.empty_stats() if s is None else s
        for ch in h.children[n]:
            acc = acc + pooled[ch]
        pooled[n] = acc
    return pooled


def _node_stats(h: Hierarchy, family, data: Mapping[str, object]) -> dict[int, object]:
    out = {}
    for name, rows in data.items():
        out[h.index(name)] = family.stats(rows)
    return out


def _check_leaf_data(h: Hierarchy, family, data: Mapping[str, object]):
    for n in range(h.size):
        if h.is_leaf(n):
            rows = data.get(h.names[n])
            if rows is None or family.n_instances(rows) == 0:
                raise ValueError(f"leaf {h.names[n]!r} has no data")


def _ml(family, stats, alpha: float) -> np.ndarray:
    try:
        vec = family.ml_vector(stats, alpha)
    except (NotPositiveDefinite, ValueError):
        vec = None
    if vec is None or not np.all(np.isfinite(vec)) or not family.feasible(vec):
        if alpha >= INIT_FLOOR:
            raise NumericalError("regularized ML estimate is degenerate")
        vec = family.ml_vector(stats, INIT_FLOOR)
    return vec


def init_state(h: Hierarchy, data: Mapping[str, object], family, alpha: float,
               policy="ml") -> ParamState:
    """Starting point for the optimizer.

    ``policy`` is ``"ml"`` (each node at the regularized ML estimate of its
    pooled subtree data), ``"root"`` (every node at the pooled root
    estimate), or an explicit :class:`ParamState` / flat array.
    """
    index = layout(h, family.groups)
    if isinstance(policy, ParamState):
        return ParamState(index, policy.values.copy())
    if isinstance(policy, np.ndarray):
        return ParamState(index, policy.copy())
    pooled = _subtree_stats(h, family, _node_stats(h, family, data))
    vals = np.zeros(index.total_dim)
    if policy == "ml":
        for n in range(h.size):
            vals[index.node_slice(n)] = _ml(family, pooled[n], alpha)
    elif policy == "root":
        root_vec = _ml(family, pooled[h.root], alpha)
        for n in range(h.size):
            vals[index.node_slice(n)] = root_vec
    else:
        raise ValueError(f"unknown init policy {policy!r}")
    return ParamState(index, vals)


def _tied_layout(h: Hierarchy, family, mask: TyingMask, granularity: str):
    """Per edge, the tied positions within each group (in layout order)."""
    out = []
    for c, p in h.edges:
        m = mask.edge(h.names[c])
        groups = []
        off = 0
        for g, size in family.groups:
            tied = np.flatnonzero(m[g])
            if tied.size:
                groups.append(off + tied)
            off += size
        out.append((c, p, groups))
    return out


def bootstrap_dot(h: Hierarchy, data: Mapping[str, object], family, cfg: BootstrapConfig,
                  alpha: float, mask: TyingMask | None = None) -> DotCoefficients:
    """Set each lambda to the bootstrap variance of the child-parent ML difference.

    Every trial resamples each node's instances with replacement (same
    size) from a generator seeded by ``(cfg.seed, trial)``. Child and parent
    estimates come from the same trial; internal nodes are fit on the pooled
    resampled data of their subtree.
    """
    _check_leaf_data(h, family, data)
    mask = mask or TyingMask.for_family(family)
    tied = _tied_layout(h, family, mask, cfg.granularity)
    names = sorted(data)
    arrays = {name: np.asarray(data[name], dtype=float) for name in names}

    deltas = []
    for k in range(cfg.resamples):
        rng = np.random.default_rng([cfg.seed, k])
        stats = {}
        for name in names:
            rows = arrays[name]
            if len(rows) == 0:
                continue
            pick = rng.integers(0, len(rows), size=len(rows))
            stats[h.index(name)] = family.stats(rows[pick])
        pooled = _subtree_stats(h, family, stats)
        est = {}
        for n in range(h.size):
            try:
                est[n] = family.ml_vector(pooled[n], alpha)
            except NotPositiveDefinite:
                raise NumericalError(
                    f"bootstrap ML estimate for {h.names[n]!r} is singular; use alpha > 0"
                ) from None
        row = []
        with np.errstate(invalid="ignore"):  # -inf - -inf is caught below
            for c, p, groups in tied:
                for pos in groups:
                    row.append(est[c][pos] - est[p][pos])
        deltas.append(np.concatenate(row) if row else np.zeros(0))
    deltas = np.array(deltas)
    if not np.all(np.isfinite(deltas)):
        raise NumericalError("bootstrap produced non-finite estimates (zero counts with alpha = 0?)")
    var = deltas.var(axis=0, ddof=1) if deltas.size else np.zeros(0)

    values = {}
    off = 0
    for c, _, groups in tied:
        parts = []
        for pos in groups:
            v = var[off: off + pos.size]
            off += pos.size
            parts.append(v if cfg.granularity == "coordinate" else np.array([v.mean()]))
        lam = np.concatenate(parts) if parts else np.zeros(0)
        values[h.names[c]] = np.maximum(lam, cfg.variance_floor)
    return DotCoefficients(values, cfg.granularity)


# -- MAP fitting -------------------------------------------------------------------


def _sub_solve(problem: TransferProblem, x: np.ndarray, coords: np.ndarray,
               opt: OptimizerConfig) -> CGResult:
    """Run CG on ``coords`` with every other coordinate held at ``x``."""
    base = x.copy()

    def full(y):
        z = base.copy()
        z[coords] = y
        return z

    return cg_minimize(
        lambda y: problem.value_or_inf(full(y)),
        lambda y: problem.gradient(full(y))[coords],
        x[coords], opt,
        feasible=lambda y: problem.feasible(full(y)),
        precond=(lambda y: problem.preconditioner(full(y), coords)) if opt.precondition else None,
    )


def _free_coords(problem: TransferProblem, free_groups) -> np.ndarray:
    idx = problem.index
    if free_groups is None:
        theta = np.arange(problem.theta_dim)
    else:
        theta = np.sort(np.concatenate([idx.group_coords(g) for g in free_groups]))
    lam = np.arange(problem.theta_dim, problem.n_free)
    return np.concatenate([theta, lam]).astype(int)


def _optimize(problem: TransferProblem, x0: np.ndarray, opt: OptimizerConfig,
              free: np.ndarray, alternating: bool):
    x = x0.copy()
    trace = [problem.value(x)]
    iters = 0
    if not alternating:
        res = _sub_solve(problem, x, free, opt)
        x[free] = res.x
        return x, trace + res.trace[1:], res.iterations, res.status

    idx = problem.index
    lam = np.arange(problem.theta_dim, problem.n_free)
    blocks = []
    for g in ("mean", "precision"):
        b = np.intersect1d(np.concatenate([idx.group_coords(g), lam]), free)
        if b.size:
            blocks.append(b)
    status = "max outer iterations"
    for _ in range(opt.outer_block_iters):
        before = x.copy()
        for b in blocks:
            res = _sub_solve(problem, x, b, opt)
            x[b] = res.x
            trace.extend(res.trace[1:])
            iters += res.iterations
        gnorm = np.max(np.abs(problem.gradient(x)[free]), initial=0.0)
        if gnorm <= opt.grad_tol:
            status = "converged"
            break
        if np.max(np.abs(x - before)) < opt.grad_tol:
            break
    if status != "converged":
        # block coordinate descent can crawl when the blocks are strongly
        # coupled; finish with a joint solve from the alternating iterate
        res = _sub_solve(problem, x, free, opt)
        x[free] = res.x
        trace.extend(res.trace[1:])
        iters += res.iterations
        status = res.status
    return x, trace, iters, status


def _lambda_polish(problem: TransferProblem, x, trace, iters, status, opt, free):
    """Finish a hyperprior solve by exact lambda updates alternated with theta solves.

    Lambdas whose penalty is near zero sit at b / (a + 1), where the
    remaining objective decrease can fall below the rounding level of the
    total and stall the joint line search. Each lambda has a closed-form
    minimizer given theta, so setting it exactly cannot increase the
    objective even when the decrease is unresolvable; the theta block is
    then re-solved with lambdas fixed. The trace only records values that
    the floating-point objective shows as non-increasing.
    """
    t = problem.theta_dim
    theta_free = free[free < t]
    for _ in range(opt.outer_block_iters):
        if np.max(np.abs(problem.gradient(x)[free]), initial=0.0) <= opt.grad_tol:
            return x, trace, iters, "converged"
        x = x.copy()
        x[t:] = np.log(problem.optimal_lambda(x[:t]))
        fx = problem.value(x)
        if fx <= trace[-1]:
            trace.append(fx)
        res = _sub_solve(problem, x, theta_free, opt)
        x[theta_free] = res.x
        trace.extend(v for v in res.trace[1:] if v <= trace[-1])
        iters += res.iterations
        status = res.status
    return x, trace, iters, status


def fit_map(h: Hierarchy, data: Mapping[str, object], family, config: ObjectiveConfig,
            dot: DotCoefficients | None = None, prior: HyperpriorSpec | None = None,
            opt: OptimizerConfig | None = None, init="ml",
            free_groups: Sequence[str] | None = None, seed: int = 0) -> FitResult:
    """Minimize the joint objective.

    Gaussians are solved by alternating CG over the mean block and the
    precision block, followed by a joint polish; multinomials by a single
    joint CG. ``free_groups`` restricts which parameter groups move;
    the rest stay at their initial values. In hyperprior mode with
    ``opt.n_starts > 1`` extra starts jitter the initial log-lambdas and the
    lowest objective wins.
    """
    opt = opt or OptimizerConfig()
    _check_leaf_data(h, family, data)
    if config.dot_mode == "hyperprior" and prior is None:
        if dot is None:
            raise ValueError("hyperprior mode needs DOT means or a HyperpriorSpec")
        prior = HyperpriorSpec.from_means(dot)
    problem = TransferProblem(h, family, data, config, dot=dot, prior=prior)
    state0 = init_state(h, data, family, config.alpha, init)
    x0 = problem.pack(state0.values)
    if not problem.feasible(x0) or not np.isfinite(problem.value_or_inf(x0)):
        raise NumericalError("infeasible initialization")

    alternating = opt.block_mode == "alternating" or (
        opt.block_mode == "auto" and isinstance(family, GaussianFamily))
    free = _free_coords(problem, free_groups)

    starts = [x0]
    if problem.hyper and opt.n_starts > 1:
        rng = np.random.default_rng([seed, 7919])
        for _ in range(opt.n_starts - 1):
            xs = x0.copy()
            xs[problem.theta_dim:] += rng.normal(size=problem.n_lambda)
            starts.append(xs)

    best = None
    for xs in starts:
        out = _optimize(problem, xs, opt, free, alternating)
        if problem.hyper:
            out = _lambda_polish(problem, *out, opt, free)
        val = problem.value(out[0])
        if best is None or val < best[1]:
            best = (out, val)
    (x, trace, iters, status), val = best

    grad = problem.gradient(x)[free]
    gnorm = float(np.max(np.abs(grad), initial=0.0))
    converged = gnorm <= opt.grad_tol
    theta, lam = problem.unpack(x)
    out_dot = problem.lambda_dot(lam) if config.dot_mode != "none" else None
    return FitResult(
        state=ParamState(problem.index, theta.copy()),
        dot=out_dot,
        objective_value=val,
        iterations=iters,
        converged=converged,
        trace=trace,
        status="converged" if converged else status,
        grad_norm=gnorm,
    )


def fit_hierarchical(h: Hierarchy, data: Mapping[str, object], family, *, beta: float = 1.0,
                     alpha: float = 0.0, dot_mode: str = "none",
                     divergence: DivergenceSpec | None = None,
                     bootstrap: BootstrapConfig | None = None, hyper_shape: float = 2.0,
                     opt: OptimizerConfig | None = None, init="ml") -> FitResult:
    """One-call driver: ``dot_mode`` is ``none``, ``bootstrap`` or ``hyperprior``.

    ``bootstrap`` fixes each lambda at its bootstrap variance; ``hyperprior``
    places an inverse-Gamma prior with that mean on each lambda and fits the
    lambdas jointly with the parameters.
    """
    divergence = divergence or DivergenceSpec()
    if dot_mode == "none":
        cfg = ObjectiveConfig(beta, alpha, divergence, dot_mode="none")
        return fit_map(h, data, family, cfg, opt=opt, init=init)
    bootstrap = bootstrap or BootstrapConfig()
    dot = bootstrap_dot(h, data, family, bootstrap, alpha)
    if dot_mode == "bootstrap":
        cfg = ObjectiveConfig(beta, alpha, divergence, dot_mode="fixed")
        return fit_map(h, data, family, cfg, dot=dot, opt=opt, init=init)
    if dot_mode == "hyperprior":
        cfg = ObjectiveConfig(beta, alpha, divergence, dot_mode="hyperprior")
        prior = HyperpriorSpec.from_means(dot, hyper_shape)
        return fit_map(h, data, family, cfg, dot=dot, prior=prior, opt=opt, init=init,
                       seed=bootstrap.seed)
    raise ValueError(f"unknown dot mode {dot_mode!r}")
