import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maaseq.scenarios import load_scenario
from maaseq.solver import (SolverOptions, VIProblem, extragradient_step, natural_residual, project,
                           robustness_probe, robustness_samples, solve, solve_vi)


def _affine_problem(rng, n, lower, upper):
    S = rng.normal(size=(n, n))
    M = S @ S.T / n + np.eye(n)                  # symmetric part is positive definite
    K = rng.normal(size=(n, n))
    M = M + (K - K.T) * 0.5                       # skew part keeps strong monotonicity
    b = rng.normal(size=n)
    return M, b, VIProblem(lambda y: M @ y + b, lower, upper)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_interior_affine_vi(seed, n):
    rng = np.random.default_rng(seed)
    M, b, prob = _affine_problem(rng, n, np.full(n, -1e6), np.full(n, 1e6))
    y_star = np.linalg.solve(M, -b)
    step = 0.5 / np.linalg.norm(M, 2)
    res = solve_vi(prob, np.zeros(n), SolverOptions(step_size=step, tol=1e-12, max_iter=100_000))
    assert res.converged
    np.testing.assert_allclose(res.y, y_star, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_box_constrained_separable_vi(seed, n):
    # diagonal map: the solution is the clipped unconstrained root
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 3.0, n)
    b = rng.normal(scale=3.0, size=n)
    lo, hi = -np.ones(n), np.ones(n)
    prob = VIProblem(lambda y: d * y + b, lo, hi)
    y_star = np.clip(-b / d, lo, hi)
    res = solve_vi(prob, rng.uniform(-1, 1, n), SolverOptions(step_size=0.2, tol=1e-12, max_iter=100_000))
    np.testing.assert_allclose(res.y, y_star, atol=1e-8)
    assert natural_residual(y_star, d * y_star + b, lo, hi, 0.2) == pytest.approx(0.0, abs=1e-15)


def test_iterates_stay_feasible_and_two_evaluations_per_iteration():
    lo, hi = np.zeros(4), np.ones(4)
    seen = []

    def G(y):
        seen.append(y.copy())
        return np.array([3.0, -2.0, 0.5, 1.0]) * (y - 0.3) - 0.2

    res = solve_vi(VIProblem(G, lo, hi), np.full(4, 2.0), SolverOptions(step_size=0.1, max_iter=25, tol=1e-30))
    assert res.iterations == 25 and not res.converged
    assert res.evaluations == len(seen) == 1 + 2 * 25
    assert all(np.all(y >= lo) and np.all(y <= hi) for y in seen)


def test_residuals():
    lo, hi = np.zeros(2), np.ones(2)
    y = np.array([0.5, 0.0])
    assert natural_residual(y, np.array([0.0, 1.0]), lo, hi, 0.1) == 0.0
    assert natural_residual(y, np.array([1.0, 0.0]), lo, hi, 0.1) == pytest.approx(0.1)
    y_plus, y_half = extragradient_step(lambda z: np.zeros(2), y, 0.1, lo, hi)
    assert np.linalg.norm(y_plus - y) == 0.0
    np.testing.assert_array_equal(project(np.array([-1.0, 2.0]), lo, hi), [0.0, 1.0])


def test_preconditioning_keeps_the_solution():
    d = np.array([1e3, 1.0])
    b = np.array([-5.0, 0.3])

    class Stiff(VIProblem):
        def stiffness(self, y, payload):
            return d

    prob = Stiff(lambda y: d * y + b, -np.ones(2) * 10, np.ones(2) * 10)
    res = solve_vi(prob, np.zeros(2), SolverOptions(step_size=0.5, tol=1e-12, max_iter=10_000, precondition=True))
    np.testing.assert_allclose(res.y, -b / d, atol=1e-10)


def test_max_step_lets_flat_coordinates_move_faster():
    d = np.array([1e3, 1e-2])
    b = np.array([-5.0, 0.3])

    class Stiff(VIProblem):
        def stiffness(self, y, payload):
            return d

    prob = Stiff(lambda y: d * y + b, -np.full(2, 100.0), np.full(2, 100.0))
    base = SolverOptions(step_size=1e-3, tol=1e-12, max_iter=200_000, precondition=True)
    slow = solve_vi(prob, np.zeros(2), base)
    fast = solve_vi(prob, np.zeros(2), SolverOptions(**{**base.__dict__, "max_step": 10.0}))
    np.testing.assert_allclose(fast.y, -b / d, atol=1e-6)
    assert fast.iterations * 10 < slow.iterations


def test_options_are_validated():
    for kw in ({"step_size": 0}, {"tol": -1}, {"max_iter": 0}, {"residual": "other"},
               {"step_size": 1e-3, "max_step": 1e-4}):
        with pytest.raises(ValueError):
            SolverOptions(**kw)


def test_single_iteration_is_flagged_not_raised():
    sc = load_scenario("small_with_maas")
    rep = solve(sc, sc.solver_options(max_iter=1))
    assert not rep.converged
    assert len(rep.trace) == 1
    assert {"residual_natural", "residual_diff", "elapsed_ms", "profit_MaaS", "welfare"} <= set(rep.trace[0])


def test_solve_is_deterministic():
    sc = load_scenario("small_with_maas")
    a = solve(sc, sc.solver_options(max_iter=40))
    b = solve(sc, sc.solver_options(max_iter=40))
    strip = lambda r: {k: v for k, v in r.to_dict().items() if k != "trace"}
    assert strip(a) == strip(b)
    assert [row["residual_natural"] for row in a.trace] == [row["residual_natural"] for row in b.trace]


def test_diff_residual_stopping():
    lo, hi = np.zeros(1), np.ones(1)
    res = solve_vi(VIProblem(lambda y: y - 0.5, lo, hi), np.zeros(1),
                   SolverOptions(step_size=0.5, tol=1e-9, residual="diff", max_iter=1000))
    assert res.converged and res.residual_diff < 1e-9


def test_robustness_samples_are_seeded():
    a = [m.copy() for *_, m in robustness_samples(10, (0.01, 0.1), (0.2, 1.0), 3, seed=5)]
    b = [m.copy() for *_, m in robustness_samples(10, (0.01, 0.1), (0.2, 1.0), 3, seed=5)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert [int(m.sum()) for m in a[:6]] == [2, 2, 2, 10, 10, 10]


def test_zero_shift_gives_zero_gap():
    sc = load_scenario("small_with_maas")
    res = robustness_probe(sc, sc.solver_options(max_iter=30), scales=(0.0,), ratios=(0.5, 1.0), reps=2)
    assert res.max_gap() == 0.0
    assert len(res.rows) == 4 and len(res.cells()) == 2
