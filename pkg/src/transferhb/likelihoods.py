"""Data log-likelihoods and their gradients for the two leaf-model families.

Gaussians are parametrized by mean and precision ``K``; the precision is
stored as its upper triangle (row-major, ``np.triu_indices`` order).
Multinomials are parametrized by unnormalized log-space weights (logits).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class NumericalError(ArithmeticError):
    """An estimate is degenerate or non-finite where the method needs it finite."""


def triu_size(d: int) -> int:
    return d * (d + 1) // 2


def dim_from_triu(n: int) -> int:
    d = int(round((np.sqrt(8 * n + 1) - 1) / 2))
    if triu_size(d) != n:
        raise ValueError(f"{n} is not a triangular number")
    return d


def pack_sym(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    return mat[np.triu_indices(mat.shape[0])].copy()


def unpack_sym(vec: np.ndarray, d: int | None = None) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if d is None:
        d = dim_from_triu(vec.size)
    out = np.zeros((d, d))
    iu = np.triu_indices(d)
    out[iu] = vec
    out.T[iu] = vec
    return out


def diag_positions(d: int) -> np.ndarray:
    """Positions of the diagonal entries inside the packed upper triangle."""
    rows, cols = np.triu_indices(d)
    return np.flatnonzero(rows == cols)


def sym_grad_to_triu(grad: np.ndarray) -> np.ndarray:
    """Chain rule from a symmetric-matrix gradient to packed storage.

    Each off-diagonal packed entry drives two matrix entries, so its partial
    is doubled.
    """
    d = grad.shape[0]
    rows, cols = np.triu_indices(d)
    g = grad[rows, cols].copy()
    g[rows != cols] *= 2.0
    return g


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    precision: np.ndarray  # packed upper triangle

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision_matrix(self) -> np.ndarray:
        return unpack_sym(self.precision, self.dim)

    @classmethod
    def from_matrix(cls, mean, precision_matrix) -> "GaussianParams":
        return cls(np.asarray(mean, dtype=float).copy(), pack_sym(precision_matrix))


@dataclass(frozen=True)
class GaussianStats:
    count: float
    sum: np.ndarray
    scatter: np.ndarray  # full d x d, sum of x x^T

    @property
    def dim(self) -> int:
        return self.sum.size

    def __add__(self, other: "GaussianStats") -> "GaussianStats":
        return GaussianStats(self.count + other.count, self.sum + other.sum,
                             self.scatter + other.scatter)

    @classmethod
    def empty(cls, d: int) -> "GaussianStats":
        return cls(0.0, np.zeros(d), np.zeros((d, d)))

    def centered_scatter(self, mu: np.ndarray) -> np.ndarray:
        """sum_m (x_m - mu)(x_m - mu)^T from the cached moments."""
        s_mu = np.outer(self.sum, mu)
        return self.scatter - s_mu - s_mu.T + self.count * np.outer(mu, mu)


def gaussian_stats(data, dim: int | None = None) -> GaussianStats:
    """Sufficient statistics of a data matrix (rows are instances)."""
    if isinstance(data, np.ndarray):
        x = data.astype(float, copy=False)
    else:
        rows = [list(r) for r in data]
        if rows and len({len(r) for r in rows}) != 1:
            raise ValueError("ragged rows in Gaussian data")
        x = np.array(rows, dtype=float)
    if x.size == 0:
        if dim is None:
            dim = x.shape[1] if x.ndim == 2 else 0
        return GaussianStats.empty(dim)
    if x.ndim != 2:
        raise ValueError("Gaussian data must be a 2-d array")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite entries in Gaussian data")
    return GaussianStats(float(x.shape[0]), x.sum(axis=0), x.T @ x)


def apply_ridge(stats: GaussianStats, alpha: float) -> GaussianStats:
    """Ridge-regularized view of ``stats``.

    Adds ``count * alpha`` to the scatter diagonal, so the stationary
    precision of the likelihood becomes ``inv(cov + alpha * I)``.
    """
    if alpha < 0:
        raise ValueError("ridge alpha must be non-negative")
    if alpha == 0:
        return stats
    return GaussianStats(stats.count, stats.sum,
                         stats.scatter + stats.count * alpha * np.eye(stats.dim))


def _cholesky(k: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("precision matrix is not positive definite") from None


def is_positive_definite(k: np.ndarray) -> bool:
    if not np.all(np.isfinite(k)):
        return False
    try:
        np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        return False
    return True


def gaussian_loglik(stats: GaussianStats, params: GaussianParams) -> float:
    """Total log density of the summarized data, normalizer included."""
    if stats.count == 0:
        return 0.0
    k = params.precision_matrix
    chol = _cholesky(k)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    c = stats.centered_scatter(params.mean)
    quad = np.sum(k * c)
    return float(-0.5 * quad + 0.5 * stats.count * logdet
                 - 0.5 * stats.count * stats.dim * LOG_2PI)


def gaussian_grad(stats: GaussianStats, params: GaussianParams) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`gaussian_loglik` w.r.t. (mean, packed precision)."""
    d = stats.dim
    if stats.count == 0:
        return np.zeros(d), np.zeros(triu_size(d))
    k = params.precision_matrix
    # inv(L L^T) = L^-T L^-1
    linv = np.linalg.inv(_cholesky(k))
    kinv = linv.T @ linv
    resid = stats.sum - stats.count * params.mean
    g_mean = k @ resid
    g_k = -0.5 * stats.centered_scatter(params.mean) + 0.5 * stats.count * kinv
    return g_mean, sym_grad_to_triu(g_k)


def gaussian_ml(stats: GaussianStats, alpha: float = 0.0) -> GaussianParams:
    """Closed-form (ridge-regularized) maximum likelihood estimate."""
    if stats.count <= 0:
        raise ValueError("cannot estimate a Gaussian from zero instances")
    mean = stats.sum / stats.count
    cov = stats.centered_scatter(mean) / stats.count
    cov = 0.5 * (cov + cov.T) + alpha * np.eye(stats.dim)
    chol = _cholesky(cov)
    linv = np.linalg.inv(chol)
    return GaussianParams.from_matrix(mean, linv.T @ linv)


def gaussian_logpdf_rows(x: np.ndarray, params: GaussianParams) -> np.ndarray:
    """Per-row log density."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = params.precision_matrix
    chol = _cholesky(k)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    diff = x - params.mean
    quad = np.einsum("ij,jk,ik->i", diff, k, diff)
    return -0.5 * quad + 0.5 * logdet - 0.5 * x.shape[1] * LOG_2PI


@dataclass(frozen=True)
class MultinomialParams:
    logits: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.logits - logsumexp(self.logits))


def _check_aligned(counts: np.ndarray, logits: np.ndarray):
    if counts.shape != logits.shape:
        raise ValueError(f"counts shape {counts.shape} does not match logits {logits.shape}")


def multinomial_loglik(counts, params: MultinomialParams, alpha: float = 0.0) -> float:
    """sum_i (counts_i + alpha) * (theta_i - logsumexp(theta))."""
    counts = np.asarray(counts, dtype=float)
    theta = np.asarray(params.logits, dtype=float)
    _check_aligned(counts, theta)
    w = counts + alpha
    logp = theta - logsumexp(theta)
    nz = w > 0
    return float(np.dot(w[nz], logp[nz]))


def multinomial_grad(counts, params: MultinomialParams, alpha: float = 0.0) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    theta = np.asarray(params.logits, dtype=float)
    _check_aligned(counts, theta)
    w = counts + alpha
    p = np.exp(theta - logsumexp(theta))
    return w - w.sum() * p


def nb_doc_loglik(doc, params: MultinomialParams) -> float:
    """Log-probability of a bag-of-words document (multinomial coefficient dropped)."""
    return multinomial_loglik(doc, params, 0.0)


def nb_docs_loglik(docs: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """Vectorized :func:`nb_doc_loglik` for a (docs x vocab) count matrix.

    Words absent from a document contribute nothing, even when their
    probability is zero.
    """
    docs = np.asarray(docs, dtype=float)
    logp = np.asarray(logits, dtype=float) - logsumexp(logits)
    safe = np.where(np.isfinite(logp), logp, 0.0)
    out = docs @ safe
    bad = ~np.isfinite(logp)
    if bad.any():
        hit = (docs[:, bad] > 0).any(axis=1)
        out = np.where(hit, -np.inf, out)
    return out


def multinomial_ml(counts, alpha: float = 0.0) -> MultinomialParams:
    """Smoothed log frequencies; zero-probability words get logit ``-inf``."""
    counts = np.asarray(counts, dtype=float)
    w = counts + alpha
    total = w.sum()
    if total <= 0:
        raise ValueError("cannot estimate a multinomial from zero counts")
    with np.errstate(divide="ignore"):
        return MultinomialParams(np.log(w / total))
