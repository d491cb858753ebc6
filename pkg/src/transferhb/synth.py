"""Seeded synthetic transfer hierarchies with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .families import GaussianFamily, MultinomialFamily
from .hierarchy import Hierarchy, build_hierarchy, leaves
from .likelihoods import GaussianParams, pack_sym


@dataclass(frozen=True)
class SynthSpec:
    """Tree shape, model size and sampling sizes for a synthetic problem.

    ``branching[k]`` is the number of children of every node at depth ``k``.
    For multinomials ``test_total`` (if set) draws that many test documents
    with uniformly random leaf labels instead of ``n_test`` per leaf.
    """

    family: str = "gaussian"
    branching: tuple[int, ...] = (2,)
    size: int = 10
    perturbation: float = 0.1
    n_train: int = 5
    n_test: int = 20
    seed: int = 0
    root_scale: float = 1.0
    doc_length: int = 50
    test_total: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "branching", tuple(int(b) for b in self.branching))
        if self.family not in ("gaussian", "multinomial"):
            raise ValueError(f"unknown family {self.family!r}")
        if any(b < 1 for b in self.branching):
            raise ValueError("branching factors must be positive")
        if self.size < 1 or self.n_train < 1 or self.n_test < 1 or self.doc_length < 1:
            raise ValueError("sizes and counts must be positive")
        if self.perturbation < 0 or self.root_scale < 0:
            raise ValueError("scales must be non-negative")
        if self.test_total is not None and self.test_total < 1:
            raise ValueError("test_total must be positive")

    @property
    def model_family(self):
        if self.family == "gaussian":
            return GaussianFamily(self.size)
        return MultinomialFamily(self.size)


def tree(branching) -> Hierarchy:
    names = ["root"]
    edges = []
    frontier = ["root"]
    for b in branching:
        nxt = []
        for parent in frontier:
            for i in range(b):
                name = f"n{i}" if parent == "root" else f"{parent}_{i}"
                names.append(name)
                edges.append((name, parent))
                nxt.append(name)
        frontier = nxt
    return build_hierarchy(edges, names)


def _root_gaussian(rng, d, scale):
    mean = scale * rng.normal(size=d)
    a = rng.normal(size=(d, d))
    cov = a @ a.T / d + 0.5 * np.eye(d)
    return GaussianParams.from_matrix(mean, np.linalg.inv(cov))


def _perturb_gaussian(rng, parent: GaussianParams, scale) -> GaussianParams:
    d = parent.dim
    mean = parent.mean + scale * rng.normal(size=d)
    # scaling K by D on both sides keeps it PD and jitters log K_ii by scale * z
    dvec = np.exp(0.5 * scale * rng.normal(size=d))
    k = parent.precision_matrix * np.outer(dvec, dvec)
    return GaussianParams.from_matrix(mean, k)


def _sample_gaussian(rng, params: GaussianParams, n):
    cov = np.linalg.inv(params.precision_matrix)
    cov = 0.5 * (cov + cov.T)
    chol = np.linalg.cholesky(cov)
    return params.mean + rng.normal(size=(n, params.dim)) @ chol.T


def synthesize(spec: SynthSpec):
    """Draw ground truth and train/test sets.

    Returns ``(hierarchy, truth, train, test)``; ``truth`` maps every node
    name to its flat parameter block, ``train``/``test`` map leaf names to
    instance arrays (rows for Gaussians, count vectors for documents).
    """
    rng = np.random.default_rng(spec.seed)
    h = tree(spec.branching)
    fam = spec.model_family
    truth = {}
    for n in h.topological():
        p = h.parent(n)
        if spec.family == "gaussian":
            if p is None:
                prm = _root_gaussian(rng, spec.size, spec.root_scale)
            else:
                prm = _perturb_gaussian(rng, fam.split(truth[h.names[p]]), spec.perturbation)
            truth[h.names[n]] = np.concatenate([prm.mean, pack_sym(prm.precision_matrix)])
        else:
            if p is None:
                vec = spec.root_scale * rng.normal(size=spec.size)
            else:
                vec = truth[h.names[p]] + spec.perturbation * rng.normal(size=spec.size)
            truth[h.names[n]] = vec

    leaf_names = [h.names[n] for n in leaves(h)]

    def draw(name, count):
        if spec.family == "gaussian":
            return _sample_gaussian(rng, fam.split(truth[name]), count)
        p = softmax(truth[name])
        return rng.multinomial(spec.doc_length, p, size=count).astype(float)

    train = {name: draw(name, spec.n_train) for name in leaf_names}
    if spec.family == "multinomial" and spec.test_total is not None:
        labels = rng.integers(0, len(leaf_names), size=spec.test_total)
        test = {}
        for i, name in enumerate(leaf_names):
            test[name] = draw(name, int(np.sum(labels == i)))
    else:
        test = {name: draw(name, spec.n_test) for name in leaf_names}
    return h, truth, train, test
