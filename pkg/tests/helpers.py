"""Shared builders and oracles for the test suite."""

import numpy as np

from transferhb.families import GaussianFamily, MultinomialFamily
from transferhb.hierarchy import ParamState, build_hierarchy, layout, leaves
from transferhb.likelihoods import pack_sym
from transferhb.objective import (
    DivergenceSpec,
    DotCoefficients,
    HyperpriorSpec,
    ObjectiveConfig,
    TransferProblem,
)


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def grad_mismatch(analytic, numeric, rtol=1e-5, atol=1e-8):
    """Indices where neither the relative nor the absolute tolerance holds."""
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.flatnonzero((err > rtol * scale) & (err > atol))


def random_tree(rng, n_nodes):
    names = [f"c{i}" for i in range(n_nodes)]
    edges = [(names[i], names[int(rng.integers(i))]) for i in range(1, n_nodes)]
    return build_hierarchy(edges, names)


def random_spd(rng, d, ridge=1.0):
    a = rng.normal(size=(d, d))
    return a @ a.T / d + ridge * np.eye(d)


def random_data(rng, h, family, rows=4):
    out = {}
    for n in leaves(h):
        if isinstance(family, GaussianFamily):
            out[h.names[n]] = rng.normal(size=(family.dim + rows, family.dim))
        else:
            out[h.names[n]] = rng.integers(0, 5, size=(rows, family.vocab)).astype(float)
    return out


def random_state(rng, h, family, min_gap=0.1):
    """Random parameters; tied child-parent gaps stay at least ``min_gap`` in size.

    Keeping gaps away from zero keeps finite differences clear of the
    smoothed-L1 kink.
    """
    index = layout(h, family.groups)
    vals = np.zeros(index.total_dim)
    tied = np.concatenate([m for m in family.default_tied().values()])
    for n in h.topological():
        p = h.parent(n)
        if isinstance(family, GaussianFamily):
            d = family.dim
            vec = np.concatenate([rng.normal(size=d), pack_sym(random_spd(rng, d))])
        else:
            vec = rng.normal(size=family.vocab)
        if p is not None:
            par = vals[index.node_slice(p)]
            gap = rng.choice([-1, 1], size=vec.size) * rng.uniform(min_gap, 0.6, size=vec.size)
            vec = np.where(tied, par + gap, vec)
            if isinstance(family, GaussianFamily) and not family.feasible(vec):
                vec = np.where(tied, par, vec)
                vec[d:] = pack_sym(random_spd(rng, d))
        vals[index.node_slice(n)] = vec
    return ParamState(index, vals)


def random_dot(rng, h, family, low=0.3, high=2.0):
    dot = DotCoefficients.constant(h, family, 1.0)
    return DotCoefficients({k: rng.uniform(low, high, size=v.size) for k, v in dot.values.items()})


def random_problem(rng, tag, size, n_nodes, divergence="l2", dot_mode="fixed"):
    """A seeded random joint-objective instance and a feasible state for it."""
    h = random_tree(rng, n_nodes)
    family = GaussianFamily(size) if tag == "gaussian" else MultinomialFamily(size)
    data = random_data(rng, h, family)
    spec = {"l2": DivergenceSpec("l2"), "l1": DivergenceSpec("l1", smoothing=1e-3),
            "eps": DivergenceSpec("eps", epsilon=0.05)}[divergence]
    config = ObjectiveConfig(beta=float(rng.uniform(0.5, 2.0)), alpha=0.1, divergence=spec,
                             dot_mode=dot_mode)
    dot = random_dot(rng, h, family)
    prior = HyperpriorSpec.from_means(random_dot(rng, h, family)) if dot_mode == "hyperprior" else None
    problem = TransferProblem(h, family, data, config, dot=dot, prior=prior)
    state = random_state(rng, h, family)
    return problem, state, dot


def two_leaf(rng=None, tag="gaussian", size=2, rows=6):
    h = build_hierarchy([("a", "root"), ("b", "root")], ["root", "a", "b"])
    rng = rng or np.random.default_rng(0)
    family = GaussianFamily(size) if tag == "gaussian" else MultinomialFamily(size)
    return h, family, random_data(rng, h, family, rows)


def is_monotone(trace):
    return bool(np.all(np.diff(np.asarray(trace, dtype=float)) <= 0))


NEWSGROUP_TREE = {
    "religion": ["alt.atheism", "soc.religion.christian", "talk.religion.misc"],
    "politics": ["talk.politics.guns", "talk.politics.mideast", "talk.politics.misc"],
    "vehicles": ["rec.autos", "rec.motorcycles"],
    "sports": ["rec.sport.baseball", "rec.sport.hockey"],
    "computers": ["comp.graphics", "comp.os.ms-windows.misc", "comp.sys.ibm.pc.hardware",
                  "comp.sys.mac.hardware", "comp.windows.x"],
}


def newsgroup_hierarchy():
    names = ["root"] + list(NEWSGROUP_TREE)
    edges = [(mid, "root") for mid in NEWSGROUP_TREE]
    for mid, groups in NEWSGROUP_TREE.items():
        names += groups
        edges += [(g, mid) for g in groups]
    return build_hierarchy(edges, names)
