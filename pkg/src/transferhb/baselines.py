"""Baseline estimators, evaluation metrics, k-fold splitting and PCA."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .families import GaussianFamily, MultinomialFamily
from .hierarchy import Hierarchy
from .likelihoods import NotPositiveDefinite

LN2 = np.log(2.0)


@dataclass(frozen=True)
class CvGrid:
    values: tuple[float, ...]
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("CV grid needs at least one value")
        if self.folds < 2:
            raise ValueError("CV needs at least two folds")


def kfold_split(n: int, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle into ``k`` near-equal folds; the first ``n % k`` folds get one extra."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(test)))
    return out


def _cv_splits(n: int, grid: CvGrid):
    if n < 2:
        raise ValueError("cross-validation needs at least two instances")
    return kfold_split(n, min(grid.folds, n), grid.seed)


def _fit_leaf(family, rows, alpha):
    """Regularized ML node vector, or None if degenerate."""
    try:
        vec = family.ml_vector(family.stats(rows), alpha)
    except (NotPositiveDefinite, ValueError):
        return None
    return vec


def _heldout(family, vec, rows) -> float:
    if vec is None:
        return -np.inf
    ll = family.loglik_rows(vec, rows)
    return float(np.sum(ll))


def _pick(values: Sequence[float], scores: Sequence[float]) -> float:
    scores = np.asarray(scores, dtype=float)
    if not np.any(np.isfinite(scores)):
        return float(max(values))
    return float(values[int(np.argmax(np.where(np.isnan(scores), -np.inf, scores)))])


def fit_cvreg(data: Mapping[str, object], family, grid: CvGrid):
    """Independent per-leaf fits with cross-validated regularization.

    For each leaf, the alpha maximizing total held-out log-likelihood over the
    folds is chosen (first grid value on ties) and the leaf is refit on all of
    its data. Returns ``(params, alphas)`` keyed by leaf name.
    """
    params, alphas = {}, {}
    for name in sorted(data):
        rows = np.asarray(data[name], dtype=float)
        if len(rows) == 0:
            raise ValueError(f"leaf {name!r} has no data")
        if len(grid.values) == 1:
            best = grid.values[0]
        else:
            scores = []
            splits = _cv_splits(len(rows), grid)
            for a in grid.values:
                scores.append(sum(_heldout(family, _fit_leaf(family, rows[tr], a), rows[te])
                                  for tr, te in splits))
            best = _pick(grid.values, scores)
        vec = _fit_leaf(family, rows, best)
        if vec is None:
            raise NotPositiveDefinite(
                f"leaf {name!r}: regularized ML at alpha={best} is degenerate")
        params[name] = vec
        alphas[name] = best
    return params, alphas


def fit_likelihood(data: Mapping[str, object], family) -> dict[str, np.ndarray]:
    """Unregularized ML per leaf; unseen words get probability zero."""
    out = {}
    for name in sorted(data):
        rows = np.asarray(data[name], dtype=float)
        if len(rows) == 0:
            raise ValueError(f"leaf {name!r} has no data")
        if isinstance(family, GaussianFamily) and len(rows) <= family.dim:
            raise ValueError(
                f"leaf {name!r}: {len(rows)} instances cannot give a nonsingular "
                f"{family.dim}-dim ML covariance")
        try:
            out[name] = family.ml_vector(family.stats(rows), 0.0)
        except NotPositiveDefinite:
            raise NotPositiveDefinite(f"leaf {name!r}: ML covariance is singular") from None
    return out


# -- shrinkage -----------------------------------------------------------------------


def _smoothed(h: Hierarchy, docs: Mapping[str, np.ndarray], vocab: int, alpha: float):
    """Laplace-smoothed word distribution of each node's pooled subtree data."""
    counts = {}
    for n in reversed(h.topological()):
        acc = np.zeros(vocab)
        own = docs.get(h.names[n])
        if own is not None and len(own):
            acc += np.asarray(own, dtype=float).sum(axis=0)
        for ch in h.children[n]:
            acc += counts[ch]
        counts[n] = acc
    return {n: (c + alpha) / (c.sum() + alpha * vocab) for n, c in counts.items()}


def shrink(h: Hierarchy, own: Mapping[int, np.ndarray], weights: Mapping[int, float]):
    """Interpolate top-down: node = w * own + (1 - w) * parent's result.

    ``weights`` maps depth to w; the root keeps its own estimate.
    """
    out = {}
    for n in h.topological():
        p = h.parent(n)
        if p is None:
            out[n] = own[n]
        else:
            w = weights[h.depth(n)]
            out[n] = w * own[n] + (1.0 - w) * out[p]
    return out


def _prob_to_logits(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def fit_shrinkage(h: Hierarchy, data: Mapping[str, object], family, grid: CvGrid,
                  alpha: float = 1.0):
    """Hierarchical shrinkage of Laplace-smoothed word distributions.

    One interpolation weight per tree level, chosen jointly over the grid by
    k-fold CV on the leaves' documents. Returns ``(logits by node name,
    weights by depth)``.
    """
    if not isinstance(family, MultinomialFamily):
        raise ValueError("shrinkage is only defined for the multinomial family; "
                         "interpolating Gaussian precisions is not supported")
    docs = {k: np.asarray(v, dtype=float).reshape(-1, family.vocab) for k, v in data.items()}
    depths = sorted({h.depth(n) for n in range(h.size)} - {0})
    combos = list(itertools.product(grid.values, repeat=len(depths)))
    if len(combos) == 1 or not depths:
        best = combos[0]
    else:
        splits = {name: _cv_splits(len(d), grid) for name, d in docs.items()}
        n_folds = min(len(s) for s in splits.values())
        scores = np.zeros(len(combos))
        for f in range(n_folds):
            train = {name: d[splits[name][f][0]] for name, d in docs.items()}
            test = {name: d[splits[name][f][1]] for name, d in docs.items()}
            own = _smoothed(h, train, family.vocab, alpha)
            for ci, combo in enumerate(combos):
                final = shrink(h, own, dict(zip(depths, combo)))
                for name, t in test.items():
                    scores[ci] += float(np.sum(family.loglik_rows(
                        _prob_to_logits(final[h.index(name)]), t)))
        best = combos[int(np.argmax(scores))]
    weights = dict(zip(depths, best))
    own = _smoothed(h, docs, family.vocab, alpha)
    final = shrink(h, own, weights)
    return {h.names[n]: _prob_to_logits(p) for n, p in final.items()}, weights


def fit_cvconst(h: Hierarchy, data: Mapping[str, object], family, alpha: float,
                grid: CvGrid, opt=None):
    """Transfer fit without DOT coefficients, global beta chosen by k-fold CV.

    Fold ``f`` holds out the ``f``-th split of every leaf simultaneously.
    Returns ``(FitResult, beta)``.
    """
    from .estimation import fit_map
    from .objective import ObjectiveConfig

    arrays = {k: np.asarray(v, dtype=float) for k, v in data.items()}
    if len(grid.values) == 1:
        beta = grid.values[0]
    else:
        splits = {k: _cv_splits(len(v), grid) for k, v in arrays.items()}
        n_folds = min(len(s) for s in splits.values())
        scores = []
        for b in grid.values:
            total = 0.0
            cfg = ObjectiveConfig(beta=b, alpha=alpha)
            for f in range(n_folds):
                train = {k: v[splits[k][f][0]] for k, v in arrays.items()}
                try:
                    fit = fit_map(h, train, family, cfg, opt=opt)
                except (ValueError, ArithmeticError, NotPositiveDefinite):
                    total = -np.inf
                    break
                params = fit.params(h)
                for k, v in arrays.items():
                    total += _heldout(family, params[k], v[splits[k][f][1]])
            scores.append(total)
        beta = _pick(grid.values, scores)
    return fit_map(h, arrays, family, ObjectiveConfig(beta=beta, alpha=alpha), opt=opt), beta


# -- evaluation ----------------------------------------------------------------------


def test_loglik(family, vec: np.ndarray, rows) -> float:
    """Average held-out log-likelihood in bits per instance."""
    rows = np.asarray(rows, dtype=float)
    if len(rows) == 0:
        raise ValueError("empty test set")
    ll = family.loglik_rows(vec, rows)
    return float(np.sum(ll) / (len(rows) * LN2))


test_loglik.__test__ = False  # not a pytest test despite the name


def classify(docs, class_logits: np.ndarray, priors: np.ndarray | None = None) -> np.ndarray:
    """Naive Bayes argmax over classes; ties go to the smallest class index.

    ``class_logits`` has one row per class. ``priors`` are unnormalized
    (uniform when ``None``).
    """
    docs = np.atleast_2d(np.asarray(docs, dtype=float))
    class_logits = np.atleast_2d(np.asarray(class_logits, dtype=float))
    logp = class_logits - logsumexp(class_logits, axis=1, keepdims=True)
    safe = np.where(np.isfinite(logp), logp, 0.0)
    scores = docs @ safe.T
    bad = ~np.isfinite(logp)
    if bad.any():
        hit = docs @ bad.T.astype(float) > 0
        scores = np.where(hit, -np.inf, scores)
    if priors is not None:
        priors = np.asarray(priors, dtype=float)
        with np.errstate(divide="ignore"):
            scores = scores + np.log(priors / priors.sum())
    return np.argmax(scores, axis=1)


def empirical_priors(counts: Sequence[int]) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    return c / c.sum()


@dataclass
class EvalReport:
    """Per-class held-out log-likelihood and (for classifiers) accuracy."""

    method: str
    n_train: int | None = None
    nats: dict[str, float] = field(default_factory=dict)
    accuracy: float | None = None

    @property
    def bits(self) -> dict[str, float]:
        return {k: v / LN2 for k, v in self.nats.items()}

    @property
    def mean_bits(self) -> float:
        return float(np.mean(list(self.bits.values()))) if self.nats else float("nan")

    def rows(self) -> list[tuple]:
        n = "" if self.n_train is None else str(self.n_train)
        out = [(self.method, k, n, v, v / LN2) for k, v in self.nats.items()]
        if self.accuracy is not None:
            out.append((self.method, "ACCURACY", n, float("nan"), self.accuracy))
        return out

    def deltas(self, baseline: "EvalReport") -> dict[str, float]:
        """Bits-per-instance difference from ``baseline`` for each shared class.

        The key ``"accuracy"`` holds the accuracy difference when both
        reports have one.
        """
        mine, theirs = self.bits, baseline.bits
        out = {k: mine[k] - theirs[k] for k in mine if k in theirs}
        if self.accuracy is not None and baseline.accuracy is not None:
            out["accuracy"] = self.accuracy - baseline.accuracy
        return out

    def to_table(self) -> str:
        lines = ["method\tclass\tN\tnats_per_instance\tbits_per_instance"]
        for method, cls, n, nats, bits in self.rows():
            if cls == "ACCURACY":
                lines.append(f"{method}\taccuracy\t{n}\t\t{float(bits)!r}")
            else:
                lines.append(f"{method}\t{cls}\t{n}\t{float(nats)!r}\t{float(bits)!r}")
        return "\n".join(lines) + "\n"


def evaluate(family, params: Mapping[str, np.ndarray], test: Mapping[str, object],
             method: str = "model", n_train: int | None = None,
             priors: Mapping[str, float] | None = None) -> EvalReport:
    """Per-class nats per instance; accuracy too for the multinomial family."""
    rep = EvalReport(method, n_train)
    for name in sorted(test):
        rows = np.asarray(test[name], dtype=float)
        if len(rows) == 0:
            continue
        rep.nats[name] = float(test_loglik(family, params[name], rows) * LN2)
    if isinstance(family, MultinomialFamily):
        classes = sorted(params) if priors is None else sorted(priors)
        classes = [c for c in classes if c in params]
        logits = np.array([params[c] for c in classes])
        pri = None if priors is None else np.array([priors[c] for c in classes])
        correct = total = 0
        for name in sorted(test):
            rows = np.asarray(test[name], dtype=float).reshape(-1, family.vocab)
            if not len(rows):
                continue
            pred = classify(rows, logits, pri)
            correct += int(np.sum(pred == classes.index(name)))
            total += len(rows)
        rep.accuracy = correct / total if total else float("nan")
    return rep


# -- PCA -----------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]


def pca_fit(data, d: int) -> PcaModel:
    """Top-``d`` principal directions of the sample covariance (ddof=1).

    Each basis vector is signed so its largest-magnitude entry is positive.
    """
    x = np.asarray(data, dtype=float)
    n, dim = x.shape
    if d < 1 or d > min(dim, n - 1):
        raise ValueError(f"target dimension {d} must lie in [1, min(D={dim}, rows-1={n - 1})]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:d]
    basis = evecs[:, order]
    pivot = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivot, np.arange(d)])
    signs[signs == 0] = 1.0
    return PcaModel(mean, basis * signs, np.maximum(evals[order], 0.0))


def pca_project(model: PcaModel, rows) -> np.ndarray:
    return (np.asarray(rows, dtype=float) - model.mean) @ model.basis


def pca_reconstruct(model: PcaModel, reduced) -> np.ndarray:
    return np.asarray(reduced, dtype=float) @ model.basis.T + model.mean
