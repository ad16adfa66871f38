import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from maaseq import pumcm
from maaseq.pumcm import Mdp, UtilityError, check_utilities, solve_destination, value_iteration

from conftest import random_mdp, random_utilities


def _paths(mdp, s):
    """Every action sequence from ``s`` to the absorbing state (acyclic MDPs only)."""
    if s == mdp.n_states:
        return [[]]
    out = []
    for a in np.flatnonzero(mdp.tail == s):
        out += [[a] + p for p in _paths(mdp, mdp.head[a])]
    return out


def _brute_force(mdp, u, q, sigma):
    """Path-logit oracle: V(s) = sigma log sum_paths exp(U/sigma), flows from path probabilities."""
    V = np.zeros(mdp.n_states)
    x = np.zeros(mdp.n_actions)
    for s in range(mdp.n_states):
        paths = _paths(mdp, s)
        utils = np.array([u[p].sum() for p in paths])
        V[s] = sigma * logsumexp(utils / sigma)
        prob = np.exp(utils / sigma - V[s] / sigma)
        for p, w in zip(paths, prob):
            np.add.at(x, p, q[s] * w)
    return V, x


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.3, 3.0))
def test_matches_path_enumeration_on_dags(seed, sigma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=5, extra=6, cyclic=False)
    u = random_utilities(rng, mdp)
    q = rng.uniform(0, 10, mdp.n_states)
    sol = solve_destination(mdp, u, q, sigma)
    V, x = _brute_force(mdp, u, q, sigma)
    np.testing.assert_allclose(sol.V, V, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(sol.x, x, rtol=1e-8, atol=1e-9)


def test_two_route_logit_closed_form():
    mdp = Mdp(1, np.array([0, 0]), np.array([1, 1]))
    u = np.array([-1.0, -2.0])
    sol = solve_destination(mdp, u, np.array([10.0]), sigma=0.5)
    assert sol.V[0] == pytest.approx(0.5 * np.log(np.exp(-2.0) + np.exp(-4.0)), rel=1e-12)
    assert sol.x[0] == pytest.approx(10.0 / (1.0 + np.exp(-2.0)), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_newton_and_value_iteration_agree(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=8, extra=12)
    u = random_utilities(rng, mdp)
    Vn = value_iteration(mdp, u, 1.0, method="newton")
    Vv = value_iteration(mdp, u, 1.0, method="vi")
    np.testing.assert_allclose(Vn, Vv, atol=1e-8)
    TV, _, _ = pumcm.soft_bellman(mdp, pumcm.state_action_values(mdp, u, Vn), 1.0)
    np.testing.assert_allclose(TV, Vn, atol=1e-10)


def test_small_sigma_approaches_best_path():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, n_states=5, extra=6, cyclic=False)
    u = random_utilities(rng, mdp)
    best = max(u[p].sum() for p in _paths(mdp, 0))
    V = value_iteration(mdp, u, 1e-3)
    assert V[0] == pytest.approx(best, abs=0.01)


@pytest.mark.parametrize("seed", range(10))
def test_conservation(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=10, extra=20)
    sol = solve_destination(mdp, random_utilities(rng, mdp), rng.uniform(0, 5, 10))
    n = mdp.n_states
    inflow = np.bincount(mdp.head, weights=sol.x, minlength=n + 1)
    outflow = np.bincount(mdp.tail, weights=sol.x, minlength=n + 1)
    np.testing.assert_allclose(outflow[:n], inflow[:n] + sol.q, atol=1e-8)
    assert inflow[n] == pytest.approx(sol.q.sum(), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_flows_are_demand_weighted_value_gradients(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=8, extra=12)
    sol = solve_destination(mdp, random_utilities(rng, mdp), rng.uniform(0, 5, 8))
    np.testing.assert_allclose(pumcm.flows_from_values(sol), sol.x, rtol=1e-9, atol=1e-10)


def _fd_jacobian(mdp, u, q, sigma, gamma, h=1e-5):
    J = np.zeros((mdp.n_actions, mdp.n_actions))
    for j in range(mdp.n_actions):
        e = np.zeros_like(u)
        e[j] = h
        xp = solve_destination(mdp, u + e, q, sigma, gamma, tol=1e-13).x
        xm = solve_destination(mdp, u - e, q, sigma, gamma, tol=1e-13).x
        J[:, j] = (xp - xm) / (2 * h)
    return J


@pytest.mark.parametrize("seed, gamma", [(0, 1.0), (1, 1.0), (2, 0.9)])
def test_sensitivity_matches_finite_differences(seed, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=6, extra=10)
    u = random_utilities(rng, mdp)
    q = rng.uniform(0, 5, 6)
    sigma = rng.uniform(0.5, 2.0, 6)          # per-state scales
    sol = solve_destination(mdp, u, q, sigma, gamma, tol=1e-13)
    J = pumcm.flow_sensitivity(sol)
    np.testing.assert_allclose(J, _fd_jacobian(mdp, u, q, sigma, gamma), rtol=1e-5, atol=1e-7)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_vjp_is_the_adjoint_of_the_sensitivity(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=7, extra=10)
    sol = solve_destination(mdp, random_utilities(rng, mdp), rng.uniform(0, 5, 7), rng.uniform(0.5, 2, 7))
    W = rng.normal(size=(mdp.n_actions, 3))
    J = pumcm.flow_sensitivity(sol)
    np.testing.assert_allclose(sol.vjp(W), J.T @ W, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(sol.vjp(W[:, 0]), J.T @ W[:, 0], rtol=1e-9, atol=1e-9)


def test_utility_sign_check_names_the_action():
    with pytest.raises(UtilityError) as e:
        check_utilities(np.array([-1.0, 0.0, -2.0]))
    assert e.value.action == 1
    check_utilities(np.array([-1.0, 0.0]), free=np.array([False, True]))
    with pytest.raises(UtilityError):
        check_utilities(np.array([-1.0, np.nan]))


def test_mdp_validation():
    with pytest.raises(ValueError):
        Mdp(2, np.array([1, 0]), np.array([2, 2]))
    with pytest.raises(ValueError):
        Mdp(2, np.array([0]), np.array([2]))


def test_all_destinations_reports_the_failing_destination():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 4, 3)
    u = random_utilities(rng, mdp)
    bad = u.copy()
    bad[0] = 1.0
    with pytest.raises(pumcm.PumcmError, match="destination 9"):
        pumcm.solve_all_destinations([mdp, mdp], [u, bad], [np.ones(4)] * 2, destinations=[4, 9])


def test_divergent_cycle_is_reported():
    # doubled 0 <-> 1 loop with a costly exit: the entropy bonus outweighs the loop cost
    mdp = Mdp(2, np.array([0, 0, 0, 1, 1]), np.array([1, 1, 2, 0, 0]))
    u = np.array([-0.1, -0.1, -5.0, -0.1, -0.1])
    assert pumcm.logit_radius(mdp, u, 1.0) > 1
    with pytest.raises(pumcm.ConvergenceError, match="radius"):
        value_iteration(mdp, u, 1.0, max_iter=200)
    assert pumcm.logit_radius(mdp, u, 0.05) < 1
    value_iteration(mdp, u, 0.05)
