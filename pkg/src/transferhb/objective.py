"""Joint MAP objective over a transfer hierarchy.

The objective is the negative data log-likelihood of every node that owns
data, plus a divergence penalty on each (child, parent) edge scaled by
``beta / lambda`` per tied coordinate, plus (optionally) the negative log
inverse-Gamma density of every lambda.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .hierarchy import Hierarchy, ParamIndex, ParamState, layout
from .likelihoods import NotPositiveDefinite

DIVERGENCES = ("l2", "l1", "eps")
DOT_MODES = ("none", "fixed", "hyperprior")
GRANULARITIES = ("coordinate", "group")


@dataclass(frozen=True)
class DivergenceSpec:
    """Per-coordinate penalty between a child and its parent.

    ``l2``: d**2. ``l1``: sqrt(d**2 + s**2) - s (smoothed absolute value).
    ``eps``: max(0, |d| - epsilon)**2, flat inside the dead zone.
    """

    kind: str = "l2"
    epsilon: float = 0.0
    smoothing: float = 1e-3

    def __post_init__(self):
        if self.kind not in DIVERGENCES:
            raise ValueError(f"divergence must be one of {DIVERGENCES}, got {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.kind == "l1" and not self.smoothing > 0:
            raise ValueError("smoothed L1 needs a positive smoothing constant")


def penalty(diff, spec: DivergenceSpec):
    d = np.asarray(diff, dtype=float)
    if spec.kind == "l2":
        return d * d
    if spec.kind == "l1":
        s = spec.smoothing
        return np.sqrt(d * d + s * s) - s
    over = np.maximum(np.abs(d) - spec.epsilon, 0.0)
    return over * over


def penalty_curvature(diff, spec: DivergenceSpec):
    d = np.asarray(diff, dtype=float)
    if spec.kind == "l2":
        return np.full_like(d, 2.0)
    if spec.kind == "l1":
        s2 = spec.smoothing ** 2
        return s2 / (d * d + s2) ** 1.5
    return np.where(np.abs(d) > spec.epsilon, 2.0, 0.0)


def penalty_grad(diff, spec: DivergenceSpec):
    d = np.asarray(diff, dtype=float)
    if spec.kind == "l2":
        return 2.0 * d
    if spec.kind == "l1":
        return d / np.sqrt(d * d + spec.smoothing ** 2)
    over = np.maximum(np.abs(d) - spec.epsilon, 0.0)
    return 2.0 * over * np.sign(d)


@dataclass
class TyingMask:
    """Which coordinates of each group are penalized across an edge.

    ``default`` applies to every edge; ``overrides`` maps a child node name to
    replacement group masks for that edge only.
    """

    default: dict[str, np.ndarray]
    overrides: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def for_family(cls, family) -> "TyingMask":
        return cls(family.default_tied())

    def edge(self, child: str) -> dict[str, np.ndarray]:
        out = dict(self.default)
        out.update(self.overrides.get(child, {}))
        return out


@dataclass
class DotCoefficients:
    """Degree-of-transfer weights, keyed by child node name.

    With ``granularity="coordinate"`` each array has one entry per tied
    coordinate of the edge (groups concatenated in layout order); with
    ``"group"`` it has one entry per group that has any tied coordinate.
    """

    values: dict[str, np.ndarray]
    granularity: str = "coordinate"

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}")
        self.values = {k: np.asarray(v, dtype=float) for k, v in self.values.items()}

    def scaled(self, factor: float) -> "DotCoefficients":
        return DotCoefficients({k: v * factor for k, v in self.values.items()}, self.granularity)

    @classmethod
    def constant(cls, h: Hierarchy, family, value: float, mask: TyingMask | None = None,
                 granularity: str = "coordinate") -> "DotCoefficients":
        mask = mask or TyingMask.for_family(family)
        vals = {}
        for c, _ in h.edges:
            name = h.names[c]
            m = mask.edge(name)
            if granularity == "coordinate":
                n = sum(int(m[g].sum()) for g, _ in family.groups)
            else:
                n = sum(1 for g, _ in family.groups if m[g].any())
            vals[name] = np.full(n, float(value))
        return cls(vals, granularity)


@dataclass
class HyperpriorSpec:
    """Inverse-Gamma prior on each lambda: shape ``a`` shared, scale per lambda."""

    shape: float
    scale: dict[str, np.ndarray]

    def __post_init__(self):
        if not self.shape > 1:
            raise ValueError("inverse-Gamma shape must exceed 1 for a finite mean")
        self.scale = {k: np.asarray(v, dtype=float) for k, v in self.scale.items()}
        for k, v in self.scale.items():
            if np.any(v <= 0):
                raise ValueError(f"non-positive inverse-Gamma scale on edge {k!r}")

    @classmethod
    def from_means(cls, dot: DotCoefficients, shape: float = 2.0) -> "HyperpriorSpec":
        """Prior whose mean b / (a - 1) equals each supplied lambda."""
        return cls(shape, {k: v * (shape - 1.0) for k, v in dot.values.items()})


@dataclass(frozen=True)
class ObjectiveConfig:
    beta: float = 1.0
    alpha: float = 0.0
    divergence: DivergenceSpec = field(default_factory=DivergenceSpec)
    mask: TyingMask | None = None
    dot_mode: str = "none"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.dot_mode not in DOT_MODES:
            raise ValueError(f"dot_mode must be one of {DOT_MODES}")


def hyperprior_term(dot: DotCoefficients, prior: HyperpriorSpec) -> float:
    """sum (a + 1) log(lambda) + b / lambda over every coefficient."""
    total = 0.0
    a = prior.shape
    for edge, lam in dot.values.items():
        if np.any(lam <= 0):
            raise ValueError(f"non-positive lambda on edge {edge!r}")
        b = prior.scale[edge]
        total += float(np.sum((a + 1.0) * np.log(lam) + b / lam))
    return total


class TransferProblem:
    """Compiled joint objective for one hierarchy, family and dataset.

    The free vector is the flat parameter state, followed by ``log(lambda)``
    when ``config.dot_mode == "hyperprior"``.

    Parameters
    ----------
    h : Hierarchy
    family : GaussianFamily or MultinomialFamily
    data : mapping from node name to raw instances (rows or count vectors).
        Any node may own data; nodes without an entry contribute no data term.
    config : ObjectiveConfig
    dot : DotCoefficients, required unless ``dot_mode == "none"``.
        In hyperprior mode it supplies the starting lambdas.
    prior : HyperpriorSpec, required in hyperprior mode.
    """

    def __init__(self, h: Hierarchy, family, data: Mapping[str, object],
                 config: ObjectiveConfig, dot: DotCoefficients | None = None,
                 prior: HyperpriorSpec | None = None, stats: Mapping[str, object] | None = None):
        self.h = h
        self.family = family
        self.config = config
        self.index: ParamIndex = layout(h, family.groups)
        self.mask = config.mask or TyingMask.for_family(family)

        if stats is None:
            stats = {name: family.stats(rows) for name, rows in data.items()}
        self.fit_stats: dict[int, object] = {}
        for name, st in stats.items():
            node = h.index(name)
            self.fit_stats[node] = family.fit_stats(st, config.alpha)
        self.data_nodes = sorted(self.fit_stats)

        if config.dot_mode != "none" and dot is None:
            raise ValueError(f"dot_mode={config.dot_mode!r} needs DOT coefficients")
        if config.dot_mode == "hyperprior" and prior is None:
            raise ValueError("hyperprior mode needs a HyperpriorSpec")
        self.granularity = dot.granularity if dot is not None else "coordinate"
        self._compile_terms(dot, prior)

    def _compile_terms(self, dot, prior):
        h, idx = self.h, self.index
        child_idx, parent_idx, lam_idx = [], [], []
        lam, scale = [], []
        self.edge_lambda_slices: dict[str, slice] = {}
        for c, p in h.edges:
            name = h.names[c]
            m = self.mask.edge(name)
            start = len(lam)
            n_edge = 0
            for g, size in self.family.groups:
                tied = np.flatnonzero(m[g])
                if tied.size == 0:
                    continue
                cb, pb = idx.block(c, g), idx.block(p, g)
                child_idx.append(cb.start + tied)
                parent_idx.append(pb.start + tied)
                if self.granularity == "coordinate":
                    lam_idx.append(start + n_edge + np.arange(tied.size))
                    n_edge += tied.size
                else:
                    lam_idx.append(np.full(tied.size, start + n_edge))
                    n_edge += 1
            self.edge_lambda_slices[name] = slice(start, start + n_edge)
            if dot is not None and self.config.dot_mode != "none":
                vals = dot.values.get(name)
                if vals is None:
                    raise ValueError(f"missing DOT coefficients for edge {name!r}")
                if vals.shape != (n_edge,):
                    raise ValueError(
                        f"edge {name!r}: expected {n_edge} DOT coefficients, got {vals.shape}")
                if np.any(~(vals > 0)):
                    raise ValueError(f"edge {name!r}: DOT coefficients must be positive")
                lam.extend(vals.tolist())
            else:
                lam.extend([1.0] * n_edge)
            if prior is not None and self.config.dot_mode == "hyperprior":
                b = prior.scale.get(name)
                if b is None or b.shape != (n_edge,):
                    raise ValueError(f"hyperprior scale missing or misshaped on edge {name!r}")
                scale.extend(b.tolist())
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=int)  # noqa: E731
        self.child_idx = cat(child_idx).astype(int)
        self.parent_idx = cat(parent_idx).astype(int)
        self.lam_idx = cat(lam_idx).astype(int)
        self.lam0 = np.array(lam, dtype=float)
        self.n_lambda = self.lam0.size
        self.hyper = self.config.dot_mode == "hyperprior"
        self.prior_shape = prior.shape if self.hyper else None
        self.prior_scale = np.array(scale, dtype=float) if self.hyper else None

    # -- layout of the free vector -------------------------------------------------

    @property
    def theta_dim(self) -> int:
        return self.index.total_dim

    @property
    def n_free(self) -> int:
        return self.theta_dim + (self.n_lambda if self.hyper else 0)

    def pack(self, theta: np.ndarray, lam: np.ndarray | None = None) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if not self.hyper:
            return theta.copy()
        lam = self.lam0 if lam is None else np.asarray(lam, dtype=float)
        return np.concatenate([theta, np.log(lam)])

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        theta = x[: self.theta_dim]
        lam = np.exp(x[self.theta_dim:]) if self.hyper else self.lam0
        return theta, lam

    def lambda_dot(self, lam: np.ndarray) -> DotCoefficients:
        return DotCoefficients(
            {name: lam[s].copy() for name, s in self.edge_lambda_slices.items()},
            self.granularity)

    # -- pieces ---------------------------------------------------------------------

    def _node_vec(self, theta, node):
        return theta[self.index.node_slice(node)]

    def data_loglik(self, theta: np.ndarray) -> float:
        return float(sum(
            self.family.data_value(self.fit_stats[n], self._node_vec(theta, n))
            for n in self.data_nodes))

    def term_penalties(self, theta: np.ndarray) -> np.ndarray:
        diff = theta[self.child_idx] - theta[self.parent_idx]
        return penalty(diff, self.config.divergence)

    def penalty_value(self, theta: np.ndarray, lam: np.ndarray) -> float:
        if self.config.beta == 0 or self.child_idx.size == 0:
            return 0.0
        return float(self.config.beta * np.sum(self.term_penalties(theta) / lam[self.lam_idx]))

    def hyperprior_value(self, lam: np.ndarray) -> float:
        if not self.hyper:
            return 0.0
        a = self.prior_shape
        return float(np.sum((a + 1.0) * np.log(lam) + self.prior_scale / lam))

    def components(self, x: np.ndarray) -> dict[str, float]:
        theta, lam = self.unpack(x)
        return {
            "data": self.data_loglik(theta),
            "penalty": self.penalty_value(theta, lam),
            "hyperprior": self.hyperprior_value(lam),
        }

    # -- objective ------------------------------------------------------------------

    def value(self, x: np.ndarray) -> float:
        """Objective value; raises NotPositiveDefinite outside the domain."""
        c = self.components(np.asarray(x, dtype=float))
        return -c["data"] + c["penalty"] + c["hyperprior"]

    def value_or_inf(self, x: np.ndarray) -> float:
        try:
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                v = self.value(x)
        except NotPositiveDefinite:
            return np.inf
        return v if np.isfinite(v) else np.inf

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the free vector (log-lambda coordinates in hyperprior mode)."""
        x = np.asarray(x, dtype=float)
        theta, lam = self.unpack(x)
        g = np.zeros(self.n_free)
        for n in self.data_nodes:
            s = self.index.node_slice(n)
            g[s] -= self.family.data_grad(self.fit_stats[n], theta[s])
        beta = self.config.beta
        if beta != 0 and self.child_idx.size:
            diff = theta[self.child_idx] - theta[self.parent_idx]
            w = beta / lam[self.lam_idx]
            dterm = w * penalty_grad(diff, self.config.divergence)
            np.add.at(g, self.child_idx, dterm)
            np.add.at(g, self.parent_idx, -dterm)
        if self.hyper:
            g[self.theta_dim:] = lam * self.lambda_gradient(theta, lam)
        return g

    def lambda_gradient(self, theta: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Partial derivatives w.r.t. lambda itself (not its logarithm)."""
        per_lam = np.zeros(self.n_lambda)
        if self.config.beta != 0 and self.child_idx.size:
            per_lam = np.bincount(self.lam_idx, weights=self.term_penalties(theta),
                                  minlength=self.n_lambda)
        g = -self.config.beta * per_lam / lam ** 2
        if self.hyper:
            g = g + (self.prior_shape + 1.0) / lam - self.prior_scale / lam ** 2
        return g

    def preconditioner(self, x: np.ndarray, coords: np.ndarray | None = None):
        """Approximate inverse Hessian for CG on ``coords``.

        Uses the diagonal data curvature plus the exact (locally quadratic)
        penalty coupling between tied child/parent pairs, which is where the
        stiffness lives when lambdas are small. Returns ``apply(g) -> step``.
        """
        x = np.asarray(x, dtype=float)
        theta, lam = self.unpack(x)
        n = self.n_free
        diag = np.zeros(n)
        for node in self.data_nodes:
            s = self.index.node_slice(node)
            diag[s] += self.family.data_diag_hess(self.fit_stats[node], theta[s])
        rows, cols, vals = [], [], []
        beta = self.config.beta
        if beta != 0 and self.child_idx.size:
            diff = theta[self.child_idx] - theta[self.parent_idx]
            # floor keeps flat divergence regions (dead zone, far L1 tails) coupled
            curv = np.maximum(penalty_curvature(diff, self.config.divergence), 1e-3)
            w = beta / lam[self.lam_idx] * curv
            np.add.at(diag, self.child_idx, w)
            np.add.at(diag, self.parent_idx, w)
            rows = np.concatenate([self.child_idx, self.parent_idx])
            cols = np.concatenate([self.parent_idx, self.child_idx])
            vals = np.concatenate([-w, -w])
        if self.hyper:
            per_lam = np.bincount(self.lam_idx, weights=self.term_penalties(theta),
                                  minlength=self.n_lambda)
            diag[self.theta_dim:] = (beta * per_lam + self.prior_scale) / lam
        if coords is None:
            coords = np.arange(n)
        # tiny ridge keeps the pure-Laplacian (no data) directions invertible
        ridge = 1e-8 * max(1.0, float(np.max(np.abs(diag[coords]), initial=1.0)))
        mat = sparse.coo_matrix(
            (np.concatenate([diag, np.asarray(vals, dtype=float)]),
             (np.concatenate([np.arange(n), np.asarray(rows, dtype=int)]),
              np.concatenate([np.arange(n), np.asarray(cols, dtype=int)]))),
            shape=(n, n)).tocsc()
        sub = mat[coords][:, coords] + ridge * sparse.identity(len(coords), format="csc")
        lu = splu(sub.tocsc())
        return lu.solve

    def feasible(self, x: np.ndarray) -> bool:
        x = np.asarray(x)
        if not np.all(np.isfinite(x)):
            return False
        theta = x[: self.theta_dim]
        return all(self.family.feasible(self._node_vec(theta, n)) for n in range(self.h.size))

    def optimal_lambda(self, theta: np.ndarray) -> np.ndarray:
        """Closed-form lambda minimizing the hyperprior objective at fixed theta."""
        per_lam = np.bincount(self.lam_idx, weights=self.term_penalties(theta),
                              minlength=self.n_lambda)
        return (self.config.beta * per_lam + self.prior_scale) / (self.prior_shape + 1.0)


def _problem(state, h, data, dot, config, prior, family):
    return TransferProblem(h, family, data, config, dot=dot, prior=prior)


def transfer_penalty(state: ParamState, h: Hierarchy, dot: DotCoefficients | None,
                     config: ObjectiveConfig, *, family) -> float:
    """beta * sum over edges and tied coordinates of Div(child - parent) / lambda."""
    prob = _problem(state, h, {}, dot, _fixed(config, dot), None, family)
    return prob.penalty_value(state.values, prob.lam0)


def _fixed(config: ObjectiveConfig, dot) -> ObjectiveConfig:
    # the penalty alone never needs the hyperprior bookkeeping
    mode = "none" if dot is None else "fixed"
    return ObjectiveConfig(config.beta, config.alpha, config.divergence, config.mask, mode)


def joint_objective(state: ParamState, h: Hierarchy, data: Mapping[str, object],
                    dot: DotCoefficients | None, config: ObjectiveConfig,
                    prior: HyperpriorSpec | None = None, *, family) -> float:
    """Objective at ``state``; in hyperprior mode the lambdas are read from ``dot``."""
    prob = _problem(state, h, data, dot, config, prior, family)
    return prob.value(prob.pack(state.values))


def joint_gradient(state: ParamState, h: Hierarchy, data: Mapping[str, object],
                   dot: DotCoefficients | None, config: ObjectiveConfig,
                   prior: HyperpriorSpec | None = None, *, family) -> np.ndarray:
    """Gradient over theta, followed by d/d(lambda) in hyperprior mode."""
    prob = _problem(state, h, data, dot, config, prior, family)
    x = prob.pack(state.values)
    g = prob.gradient(x)
    if not prob.hyper:
        return g
    theta, lam = prob.unpack(x)
    return np.concatenate([g[: prob.theta_dim], prob.lambda_gradient(theta, lam)])
