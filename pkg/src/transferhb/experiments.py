"""Method dispatch and the train-size sweep harness.

:func:`fit_method` is the single entry point used by both the ``fit``
command and every sweep cell, so a sweep table is exactly the mean of the
corresponding independent fit/eval runs.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .baselines import (
    CvGrid,
    evaluate,
    fit_cvconst,
    fit_cvreg,
    fit_likelihood,
    fit_shrinkage,
)
from .estimation import BootstrapConfig, fit_hierarchical
from .families import MultinomialFamily
from .hierarchy import Hierarchy, leaves
from .objective import DivergenceSpec, DotCoefficients
from .optimize import OptimizerConfig

METHODS = ("cvreg", "likelihood", "shrinkage", "cvconst", "hb", "bootstrap", "hyperprior")
HB_METHODS = {"hb": "none", "bootstrap": "bootstrap", "hyperprior": "hyperprior"}
DEFAULT_METHODS = {
    "gaussian": ("cvreg", "cvconst", "bootstrap", "hyperprior"),
    "multinomial": ("cvreg", "likelihood", "shrinkage", "hb"),
}


@dataclass(frozen=True)
class MethodOptions:
    """Hyperparameters shared by all methods.

    ``alpha=None`` picks a family default for the transfer methods: for
    Gaussians the median of the per-leaf CV Reg choices over ``alpha_grid``,
    for multinomials Laplace smoothing (1.0). CV Reg uses ``alpha_grid``
    unless ``alpha`` is set, in which case it is fixed at that value.
    """

    alpha: float | None = None
    beta: float = 1.0
    alpha_grid: tuple[float, ...] = tuple(np.logspace(-3, 1, 9))
    beta_grid: tuple[float, ...] = tuple(np.logspace(-6, 0, 7))
    weight_grid: tuple[float, ...] = tuple(np.linspace(0.0, 1.0, 11))
    folds: int = 5
    divergence: DivergenceSpec = field(default_factory=DivergenceSpec)
    resamples: int = 50
    variance_floor: float = 1e-6
    granularity: str = "coordinate"
    hyper_shape: float = 2.0
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta,
            "alpha_grid": list(self.alpha_grid), "beta_grid": list(self.beta_grid),
            "weight_grid": list(self.weight_grid), "folds": self.folds,
            "divergence": self.divergence.kind, "epsilon": self.divergence.epsilon,
            "smoothing": self.divergence.smoothing, "resamples": self.resamples,
            "variance_floor": self.variance_floor, "granularity": self.granularity,
            "hyper_shape": self.hyper_shape, "grad_tol": self.opt.grad_tol,
            "max_iters": self.opt.max_iters,
        }


@dataclass
class FittedModel:
    """Output of :func:`fit_method`: parameters keyed by node name plus diagnostics."""

    method: str
    params: dict[str, np.ndarray]
    dot: DotCoefficients | None = None
    info: dict = field(default_factory=dict)
    converged: bool = True
    objective_value: float | None = None
    iterations: int = 0
    trace: list[float] = field(default_factory=list)


def transfer_alpha(family, train: Mapping[str, object], options: MethodOptions,
                   seed: int) -> float:
    if options.alpha is not None:
        return float(options.alpha)
    if isinstance(family, MultinomialFamily):
        return 1.0
    _, alphas = fit_cvreg(train, family, CvGrid(options.alpha_grid, options.folds, seed))
    return float(np.median([alphas[k] for k in sorted(alphas)]))


def fit_method(method: str, h: Hierarchy, family, train: Mapping[str, object],
               options: MethodOptions | None = None, seed: int = 0) -> FittedModel:
    """Fit one of :data:`METHODS` on per-leaf training data.

    ``seed`` drives every CV split and bootstrap resample inside the method.
    """
    options = options or MethodOptions()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "cvreg":
        grid = (options.alpha,) if options.alpha is not None else options.alpha_grid
        params, alphas = fit_cvreg(train, family, CvGrid(grid, options.folds, seed))
        return FittedModel(method, params, info={"alpha": alphas})
    if method == "likelihood":
        return FittedModel(method, fit_likelihood(train, family))
    if method == "shrinkage":
        alpha = 1.0 if options.alpha is None else options.alpha
        params, weights = fit_shrinkage(h, train, family,
                                        CvGrid(options.weight_grid, options.folds, seed), alpha)
        return FittedModel(method, params,
                           info={"alpha": alpha, "weights": {str(k): v for k, v in weights.items()}})

    alpha = transfer_alpha(family, train, options, seed)
    if method == "cvconst":
        fit, beta = fit_cvconst(h, train, family, alpha,
                                CvGrid(options.beta_grid, options.folds, seed), opt=options.opt)
        info = {"alpha": alpha, "beta": beta}
    else:
        boot = BootstrapConfig(options.resamples, seed, options.variance_floor,
                               options.granularity)
        fit = fit_hierarchical(h, train, family, beta=options.beta, alpha=alpha,
                               dot_mode=HB_METHODS[method], divergence=options.divergence,
                               bootstrap=boot, hyper_shape=options.hyper_shape,
                               opt=options.opt)
        info = {"alpha": alpha, "beta": options.beta, "status": fit.status,
                "grad_norm": fit.grad_norm}
    return FittedModel(method, fit.params(h), dot=fit.dot, info=info,
                       converged=fit.converged, objective_value=fit.objective_value,
                       iterations=fit.iterations, trace=list(fit.trace))


def leaf_params(h: Hierarchy, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {h.names[n]: params[h.names[n]] for n in leaves(h) if h.names[n] in params}


def class_priors(h: Hierarchy, counts: Mapping[str, int], uniform: bool = False):
    names = [h.names[n] for n in leaves(h)]
    if uniform or not counts:
        return {k: 1.0 for k in names}
    return {k: float(counts.get(k, 0)) for k in names}


# -- data splitting ------------------------------------------------------------------


def compact_vocabulary(*datasets: Mapping[str, np.ndarray]):
    """Drop words absent from every given dataset.

    Returns ``(kept word ids, remapped datasets...)``.
    """
    used = None
    for data in datasets:
        for arr in data.values():
            col = np.asarray(arr).sum(axis=0) > 0
            used = col if used is None else used | col
    keep = np.flatnonzero(used)
    return (keep,) + tuple({k: np.asarray(v)[:, keep] for k, v in d.items()} for d in datasets)


def split_pool(pool: Mapping[str, np.ndarray], n_train: int, n_test: int, seed: int):
    """Per-leaf seeded shuffle: the first ``n_test`` rows test, the next ``n_train`` train."""
    rng = np.random.default_rng(seed)
    train, test = {}, {}
    for name in sorted(pool):
        rows = np.asarray(pool[name])
        if len(rows) < n_train + n_test:
            raise ValueError(f"leaf {name!r} has {len(rows)} instances; "
                             f"need {n_train} train + {n_test} test")
        perm = rng.permutation(len(rows))
        test[name] = rows[np.sort(perm[:n_test])]
        train[name] = rows[np.sort(perm[n_test:n_test + n_train])]
    return train, test


def cell_seed(master: int, n_train: int, fold: int, method: str | None = None) -> int:
    """Seed for one sweep cell; ``method=None`` gives the shared data-split seed."""
    key = [master, n_train, fold] + ([] if method is None else [1 + METHODS.index(method)])
    return int(np.random.SeedSequence(key).generate_state(1)[0])


# -- sweep ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPlan:
    methods: tuple[str, ...]
    sizes: tuple[int, ...]
    folds: int = 5
    n_test: int = 20
    master_seed: int = 0
    baseline: str = "cvreg"

    def __post_init__(self):
        methods = tuple(self.methods)
        if self.baseline not in methods:
            methods = (self.baseline,) + methods
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        for m in methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("train sizes must be positive")
        if self.folds < 1 or self.n_test < 1:
            raise ValueError("folds and test size must be positive")


@dataclass(frozen=True)
class CellResult:
    method: str
    n_train: int
    fold: int
    bits: float
    accuracy: float | None
    converged: bool


def run_cell(method: str, n_train: int, fold: int, h: Hierarchy, family,
             pool: Mapping[str, np.ndarray], plan: SweepPlan,
             options: MethodOptions) -> CellResult:
    train, test = split_pool(pool, n_train, plan.n_test, cell_seed(plan.master_seed, n_train, fold))
    if isinstance(family, MultinomialFamily):
        keep, train, test = compact_vocabulary(train, test)
        family = MultinomialFamily(len(keep))
    fitted = fit_method(method, h, family, train, options,
                        cell_seed(plan.master_seed, n_train, fold, method))
    priors = class_priors(h, {k: len(v) for k, v in train.items()})
    rep = evaluate(family, leaf_params(h, fitted.params), test, method, n_train, priors)
    return CellResult(method, n_train, fold, rep.mean_bits, rep.accuracy, fitted.converged)


def _run_task(args):
    return run_cell(*args)


def run_sweep(h: Hierarchy, family, pool: Mapping[str, np.ndarray], plan: SweepPlan,
              options: MethodOptions | None = None, jobs: int = 1) -> list[CellResult]:
    """Fit and evaluate every (N, fold, method) cell; results in plan order.

    Each cell derives its own seeds, so ``jobs`` never changes the results.
    """
    options = options or MethodOptions()
    tasks = [(m, n, f, h, family, pool, plan, options)
             for n in plan.sizes for f in range(plan.folds) for m in plan.methods]
    if jobs <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_task, tasks))


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))


def sweep_table(cells: Sequence[CellResult], plan: SweepPlan) -> str:
    """Method x N table of fold means and mean deltas vs the baseline."""
    by = {(c.method, c.n_train, c.fold): c for c in cells}
    b = plan.baseline
    lines = [f"method\tN\tfolds\tmean_bits\tdelta_bits_vs_{b}\tmean_accuracy"
             f"\tdelta_accuracy_vs_{b}\tconverged"]
    for m in plan.methods:
        for n in plan.sizes:
            own = [by[(m, n, f)] for f in range(plan.folds)]
            base = [by[(b, n, f)] for f in range(plan.folds)]
            bits = np.mean([c.bits for c in own])
            dbits = np.mean([c.bits - r.bits for c, r in zip(own, base)])
            if own[0].accuracy is None:
                acc = dacc = None
            else:
                acc = np.mean([c.accuracy for c in own])
                dacc = np.mean([c.accuracy - r.accuracy for c, r in zip(own, base)])
            conv = sum(c.converged for c in own)
            lines.append(f"{m}\t{n}\t{plan.folds}\t{_fmt(bits)}\t{_fmt(dbits)}\t{_fmt(acc)}"
                         f"\t{_fmt(dacc)}\t{conv}/{plan.folds}")
    return "\n".join(lines) + "\n"


def cells_table(cells: Sequence[CellResult]) -> str:
    lines = ["method\tN\tfold\tbits\taccuracy\tconverged"]
    for c in cells:
        lines.append(f"{c.method}\t{c.n_train}\t{c.fold}\t{_fmt(c.bits)}\t{_fmt(c.accuracy)}"
                     f"\t{str(c.converged).lower()}")
    return "\n".join(lines) + "\n"


def plot_data(cells: Sequence[CellResult], plan: SweepPlan) -> str:
    """x = N, one column per method; y is accuracy for classifiers, bits otherwise."""
    by = {(c.method, c.n_train, c.fold): c for c in cells}
    use_acc = cells and cells[0].accuracy is not None
    lines = ["N\t" + "\t".join(plan.methods)]
    for n in plan.sizes:
        ys = []
        for m in plan.methods:
            vals = [by[(m, n, f)] for f in range(plan.folds)]
            ys.append(_fmt(np.mean([c.accuracy if use_acc else c.bits for c in vals])))
        lines.append(f"{n}\t" + "\t".join(ys))
    return "\n".join(lines) + "\n"


def synth_pool(spec, max_train: int, n_test: int):
    """Synthetic pool with enough instances per leaf for every cell."""
    from .synth import synthesize

    spec = replace(spec, n_train=max_train, n_test=n_test, test_total=None)
    h, truth, train, test = synthesize(spec)
    pool = {k: np.concatenate([train[k], test[k]]) for k in train}
    return h, spec.model_family, pool, truth


__all__ = [
    "METHODS", "DEFAULT_METHODS", "MethodOptions", "FittedModel", "fit_method",
    "leaf_params", "class_priors", "compact_vocabulary", "split_pool", "cell_seed",
    "SweepPlan", "CellResult", "run_cell", "run_sweep", "sweep_table", "cells_table",
    "plot_data", "synth_pool", "transfer_alpha",
]
