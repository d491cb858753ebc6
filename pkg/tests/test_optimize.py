import numpy as np
import pytest
from scipy.optimize import rosen, rosen_der

from helpers import is_monotone
from transferhb.optimize import OptimizerConfig, cg_minimize


def test_bowl():
    res = cg_minimize(lambda x: x @ x, lambda x: 2 * x, np.array([3.0, -4.0]))
    assert res.converged
    np.testing.assert_allclose(res.x, 0.0, atol=1e-6)
    assert res.grad_norm <= 1e-6


def test_stationary_start_takes_no_steps():
    res = cg_minimize(lambda x: x @ x, lambda x: 2 * x, np.zeros(3))
    assert res.iterations == 0
    assert res.converged and res.status == "converged"
    assert res.trace == [0.0]


def test_spd_quadratic_matches_solve():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(12, 12))
    A, b = a @ a.T + np.eye(12), rng.normal(size=12)
    res = cg_minimize(lambda x: 0.5 * x @ A @ x - b @ x, lambda x: A @ x - b, np.zeros(12),
                      OptimizerConfig(grad_tol=1e-10))
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8)
    assert is_monotone(res.trace)


def test_rosenbrock_against_scipy_minimum():
    res = cg_minimize(rosen, rosen_der, np.array([-1.2, 1.0]),
                      OptimizerConfig(grad_tol=1e-8, max_iters=20000))
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)
    assert is_monotone(res.trace)


def test_preconditioner_is_used():
    scale = np.array([1.0, 1e4])
    f = lambda x: float(np.sum(scale * x * x))  # noqa: E731
    g = lambda x: 2 * scale * x  # noqa: E731
    plain = cg_minimize(f, g, np.ones(2), OptimizerConfig(restart_period=1))
    pre = cg_minimize(f, g, np.ones(2), OptimizerConfig(restart_period=1),
                      precond=lambda x: (lambda v: v / (2 * scale)))
    assert pre.converged and pre.iterations <= 2
    assert pre.iterations < plain.iterations


def test_infeasible_start_raises():
    with pytest.raises(ValueError, match="infeasible"):
        cg_minimize(lambda x: x @ x, lambda x: 2 * x, np.ones(2), feasible=lambda x: False)


def test_non_finite_start_raises():
    with pytest.raises(ValueError, match="not finite"):
        cg_minimize(lambda x: np.inf, lambda x: x, np.ones(2))


def test_iterates_stay_feasible():
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(-np.log(x[0]) + x[0] + (x[1] - 1) ** 2) if x[0] > 0 else np.inf

    def g(x):
        return np.array([-1 / x[0] + 1, 2 * (x[1] - 1)])

    res = cg_minimize(f, g, np.array([5.0, 0.0]), feasible=lambda x: x[0] > 0)
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)
    assert all(x[0] > 0 for x in seen)
    assert is_monotone(res.trace)


def test_iteration_cap():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 30))
    A = a @ a.T + 1e-3 * np.eye(30)
    res = cg_minimize(lambda x: 0.5 * x @ A @ x, lambda x: A @ x, np.ones(30),
                      OptimizerConfig(max_iters=2))
    assert res.iterations == 2
    assert not res.converged and res.status == "max iterations"


@pytest.mark.parametrize("kw", [
    {"grad_tol": 0.0}, {"backtrack": 1.0}, {"armijo_c1": 0.0},
    {"block_mode": "diagonal"}, {"n_starts": 0},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        OptimizerConfig(**kw)
