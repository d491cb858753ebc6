"""Hierarchical transfer learning with MAP estimation over a class hierarchy.

Related classes share strength through convex divergence penalties on the
edges of a hierarchy, each weighted by a degree-of-transfer coefficient.
"""

from .baselines import (
    CvGrid,
    EvalReport,
    PcaModel,
    classify,
    empirical_priors,
    evaluate,
    fit_cvconst,
    fit_cvreg,
    fit_likelihood,
    fit_shrinkage,
    kfold_split,
    pca_fit,
    pca_project,
    pca_reconstruct,
    shrink,
    test_loglik,
)
from .estimation import (
    BootstrapConfig,
    FitResult,
    bootstrap_dot,
    fit_hierarchical,
    fit_map,
    init_state,
)
from .families import GaussianFamily, MultinomialFamily, family_from_tag
from .hierarchy import (
    Hierarchy,
    HierarchyError,
    ParamIndex,
    ParamState,
    build_hierarchy,
    internal_nodes,
    layout,
    leaves,
)
from .likelihoods import (
    GaussianParams,
    GaussianStats,
    MultinomialParams,
    NotPositiveDefinite,
    NumericalError,
    gaussian_grad,
    gaussian_loglik,
    gaussian_ml,
    gaussian_stats,
    multinomial_grad,
    multinomial_loglik,
    multinomial_ml,
    nb_doc_loglik,
)
from .objective import (
    DivergenceSpec,
    DotCoefficients,
    HyperpriorSpec,
    ObjectiveConfig,
    TransferProblem,
    TyingMask,
    joint_gradient,
    joint_objective,
    transfer_penalty,
)
from .optimize import CGResult, OptimizerConfig, cg_minimize
from .synth import SynthSpec, synthesize

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
