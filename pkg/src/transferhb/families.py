"""Model families: how a node's flat parameter block maps to a leaf model."""

from __future__ import annotations

import numpy as np

from .likelihoods import (
    GaussianParams,
    GaussianStats,
    MultinomialParams,
    apply_ridge,
    diag_positions,
    gaussian_grad,
    gaussian_loglik,
    gaussian_logpdf_rows,
    gaussian_ml,
    gaussian_stats,
    is_positive_definite,
    multinomial_grad,
    multinomial_loglik,
    multinomial_ml,
    nb_docs_loglik,
    triu_size,
    unpack_sym,
)


class GaussianFamily:
    """Multivariate Gaussian in (mean, packed precision) coordinates.

    Means and diagonal precisions are tied across edges by default;
    off-diagonal precisions are free.
    """

    name = "gaussian"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("Gaussian dimension must be >= 1")
        self.dim = int(dim)

    def __repr__(self):
        return f"GaussianFamily(dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, GaussianFamily) and other.dim == self.dim

    @property
    def groups(self) -> list[tuple[str, int]]:
        return [("mean", self.dim), ("precision", triu_size(self.dim))]

    @property
    def node_dim(self) -> int:
        return self.dim + triu_size(self.dim)

    def default_tied(self) -> dict[str, np.ndarray]:
        prec = np.zeros(triu_size(self.dim), dtype=bool)
        prec[diag_positions(self.dim)] = True
        return {"mean": np.ones(self.dim, dtype=bool), "precision": prec}

    def split(self, vec: np.ndarray) -> GaussianParams:
        return GaussianParams(vec[: self.dim], vec[self.dim:])

    def join(self, params: GaussianParams) -> np.ndarray:
        return np.concatenate([params.mean, params.precision])

    def stats(self, rows) -> GaussianStats:
        rows = np.asarray(rows, dtype=float).reshape(-1, self.dim)
        return gaussian_stats(rows, self.dim)

    def empty_stats(self) -> GaussianStats:
        return GaussianStats.empty(self.dim)

    def fit_stats(self, stats: GaussianStats, alpha: float) -> GaussianStats:
        return apply_ridge(stats, alpha)

    def data_value(self, fstats: GaussianStats, vec: np.ndarray) -> float:
        return gaussian_loglik(fstats, self.split(vec))

    def data_grad(self, fstats: GaussianStats, vec: np.ndarray) -> np.ndarray:
        gm, gk = gaussian_grad(fstats, self.split(vec))
        return np.concatenate([gm, gk])

    def data_diag_hess(self, fstats: GaussianStats, vec: np.ndarray) -> np.ndarray:
        """Diagonal of the negative log-likelihood Hessian (for preconditioning)."""
        d = self.dim
        k = unpack_sym(vec[d:], d)
        s = np.linalg.inv(k)
        rows, cols = np.triu_indices(d)
        hk = fstats.count * (s[rows, rows] * s[cols, cols] + s[rows, cols] ** 2)
        hk[rows == cols] *= 0.5
        return np.concatenate([fstats.count * np.diag(k), hk])

    def ml_vector(self, stats: GaussianStats, alpha: float) -> np.ndarray:
        return self.join(gaussian_ml(stats, alpha))

    def feasible(self, vec: np.ndarray) -> bool:
        return is_positive_definite(unpack_sym(vec[self.dim:], self.dim))

    def loglik_rows(self, vec: np.ndarray, rows) -> np.ndarray:
        return gaussian_logpdf_rows(np.asarray(rows, dtype=float), self.split(vec))

    def n_instances(self, rows) -> int:
        return len(rows)


class MultinomialFamily:
    """Naive Bayes word distribution in log space; all logits tied."""

    name = "multinomial"

    def __init__(self, vocab: int):
        if vocab < 1:
            raise ValueError("vocabulary size must be >= 1")
        self.vocab = int(vocab)

    def __repr__(self):
        return f"MultinomialFamily(vocab={self.vocab})"

    def __eq__(self, other):
        return isinstance(other, MultinomialFamily) and other.vocab == self.vocab

    @property
    def groups(self) -> list[tuple[str, int]]:
        return [("logits", self.vocab)]

    @property
    def node_dim(self) -> int:
        return self.vocab

    def default_tied(self) -> dict[str, np.ndarray]:
        return {"logits": np.ones(self.vocab, dtype=bool)}

    def split(self, vec: np.ndarray) -> MultinomialParams:
        return MultinomialParams(vec)

    def join(self, params: MultinomialParams) -> np.ndarray:
        return np.asarray(params.logits, dtype=float)

    def stats(self, docs) -> np.ndarray:
        docs = np.asarray(docs, dtype=float).reshape(-1, self.vocab)
        return docs.sum(axis=0)

    def empty_stats(self) -> np.ndarray:
        return np.zeros(self.vocab)

    def fit_stats(self, stats: np.ndarray, alpha: float) -> np.ndarray:
        if alpha < 0:
            raise ValueError("pseudocount alpha must be non-negative")
        return stats + alpha

    def data_value(self, fstats: np.ndarray, vec: np.ndarray) -> float:
        return multinomial_loglik(fstats, MultinomialParams(vec))

    def data_grad(self, fstats: np.ndarray, vec: np.ndarray) -> np.ndarray:
        return multinomial_grad(fstats, MultinomialParams(vec))

    def data_diag_hess(self, fstats: np.ndarray, vec: np.ndarray) -> np.ndarray:
        p = MultinomialParams(vec).probabilities
        return fstats.sum() * p * (1.0 - p)

    def ml_vector(self, stats: np.ndarray, alpha: float) -> np.ndarray:
        return multinomial_ml(stats, alpha).logits

    def feasible(self, vec: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(vec)))

    def loglik_rows(self, vec: np.ndarray, docs) -> np.ndarray:
        return nb_docs_loglik(np.asarray(docs, dtype=float).reshape(-1, self.vocab), vec)

    def n_instances(self, docs) -> int:
        return len(docs)


def family_from_tag(tag: str, size: int):
    if tag == "gaussian":
        return GaussianFamily(size)
    if tag == "multinomial":
        return MultinomialFamily(size)
    raise ValueError(f"unknown model family {tag!r}")


def family_size(family) -> int:
    return family.dim if isinstance(family, GaussianFamily) else family.vocab
