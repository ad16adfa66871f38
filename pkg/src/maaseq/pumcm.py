"""Perturbed-utility Markov choice model (follower layer).

Each destination defines a stochastic shortest-path MDP whose per-state
choice maximizes expected utility minus a scaled Shannon-entropy term.  With
that perturbation the Bellman optimality operator has the closed form

    (T V)(s) = sigma_s * log sum_a exp(Q(s, a) / sigma_s),   Q = u + gamma * P V,

the optimal policy is the temperature-``sigma`` softmax of ``Q`` and the
link flows, visit counts and flow sensitivities follow from linear solves
with ``I - gamma * M_pi`` where ``M_pi`` is the state-to-state transition
matrix induced by the policy.  No explicit inverse is ever formed.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

# below this many states a dense LU is faster than a sparse one
DENSE_LIMIT = 200


class PumcmError(RuntimeError):
    """Follower problem failed (bad utilities, no convergence, singular system)."""


class UtilityError(PumcmError):
    def __init__(self, message: str, action: int):
        super().__init__(message)
        self.action = action


class ConvergenceError(PumcmError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Mdp:
    """Deterministic-transition MDP with a single absorbing destination.

    ``head[a] == n_states`` means action ``a`` terminates at the destination.
    Actions must be sorted by ``tail`` and every state needs an action.
    """

    n_states: int
    tail: np.ndarray
    head: np.ndarray

    def __post_init__(self):
        tail = np.asarray(self.tail, dtype=np.int64)
        head = np.asarray(self.head, dtype=np.int64)
        object.__setattr__(self, "tail", tail)
        object.__setattr__(self, "head", head)
        if np.any(np.diff(tail) < 0):
            raise ValueError("actions must be sorted by tail state")
        if np.unique(tail).size != self.n_states:
            raise ValueError("every state needs at least one action")
        if head.min(initial=0) < 0 or head.max(initial=0) > self.n_states:
            raise ValueError("head index out of range")
        starts = np.flatnonzero(np.r_[True, tail[1:] != tail[:-1]])
        object.__setattr__(self, "starts", starts)

    @property
    def n_actions(self) -> int:
        return len(self.tail)

    @classmethod
    def from_graph(cls, graph) -> "Mdp":
        return cls(graph.n_states, graph.tail, graph.head)


def _state_sigma(sigma, n: int) -> np.ndarray:
    s = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    if np.any(s <= 0):
        raise ValueError("perturbation scale must be positive")
    return s


def check_utilities(u: np.ndarray, free: np.ndarray | None = None) -> None:
    """Reject utilities that break the bounded, non-positive requirement.

    Every action must have ``u < 0`` except those flagged in ``free`` (mode
    choice links, which lie on no cycle), which only need ``u <= 0``.
    """
    u = np.asarray(u)
    bad = ~np.isfinite(u) | (u > 0)
    strict = u >= 0
    if free is not None:
        strict &= ~free
    bad |= strict
    if bad.any():
        a = int(np.flatnonzero(bad)[0])
        raise UtilityError(f"action {a} has utility {u[a]!r}; utilities must be negative", a)


def logit_radius(mdp: "Mdp", u: np.ndarray, sigma=1.0, gamma: float = 1.0) -> float:
    """Spectral radius of ``E[s, s'] = sum_{a: s -> s'} exp(u_a / sigma_s)``.

    With one scale for all states and ``gamma = 1``, soft values are finite
    exactly when this is below 1; with per-state scales it is a diagnostic.
    """
    if gamma < 1:
        return 0.0
    n = mdp.n_states
    inner = mdp.head < n
    sig = _state_sigma(sigma, n)[mdp.tail]
    E = np.zeros((n, n))
    np.add.at(E, (mdp.tail[inner], mdp.head[inner]), np.exp(np.asarray(u)[inner] / sig[inner]))
    return float(np.max(np.abs(np.linalg.eigvals(E)))) if n else 0.0


# --------------------------------------------------------------------------
# Bellman operator and policy
# --------------------------------------------------------------------------

def state_action_values(mdp: Mdp, u: np.ndarray, V: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    """Q(s, a) = u(s, a) + gamma * V(head(a)) with V = 0 at the destination."""
    Vext = np.append(V, 0.0)
    return u + gamma * Vext[mdp.head]


def soft_bellman(mdp: Mdp, Q: np.ndarray, sigma) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Conjugate of the entropy at each state.

    Returns ``(TV, pi, log_pi)`` where ``TV(s) = sigma_s * logsumexp(Q/sigma_s)``
    and ``pi`` is the softmax policy.
    """
    sig = _state_sigma(sigma, mdp.n_states)
    z = Q / sig[mdp.tail]
    zmax = np.maximum.reduceat(z, mdp.starts)
    e = np.exp(z - zmax[mdp.tail])
    Z = np.add.reduceat(e, mdp.starts)
    lse = zmax + np.log(Z)
    pi = e / Z[mdp.tail]
    log_pi = z - lse[mdp.tail]
    return sig * lse, pi, log_pi


def optimal_policy(mdp: Mdp, V: np.ndarray, u: np.ndarray, sigma=1.0, gamma: float = 1.0) -> np.ndarray:
    """Softmax policy at the state-action values induced by ``V``."""
    return soft_bellman(mdp, state_action_values(mdp, u, V, gamma), sigma)[1]


class _Factor:
    """LU factorization of ``A = I - gamma * M_pi`` supporting ``A x = b`` and ``A^T x = b``."""

    def __init__(self, mdp: Mdp, pi: np.ndarray, gamma: float):
        n = mdp.n_states
        inner = mdp.head < n
        rows, cols, vals = mdp.tail[inner], mdp.head[inner], gamma * pi[inner]
        self.dense = n <= DENSE_LIMIT
        if self.dense:
            flat = np.bincount(rows * n + cols, weights=vals, minlength=n * n)
            A = np.eye(n) - flat.reshape(n, n)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self.lu = sla.lu_factor(A, check_finite=False)
            if not np.all(np.isfinite(self.lu[0])) or np.min(np.abs(np.diag(self.lu[0]))) < 1e-300:
                raise PumcmError("singular transition system (destination unreachable?)")
        else:
            M = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
            A = (sp.identity(n, format="csc") - M).tocsc()
            try:
                self.lu = spla.splu(A)
            except RuntimeError as exc:
                raise PumcmError(f"singular transition system: {exc}") from exc

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        if self.dense:
            x = sla.lu_solve(self.lu, b, trans=1 if transpose else 0, check_finite=False)
        else:
            x = self.lu.solve(np.asarray(b, dtype=float), trans="T" if transpose else "N")
        if not np.all(np.isfinite(x)):
            raise PumcmError("transition system is singular or ill-conditioned")
        return x


def value_iteration(mdp: Mdp, u: np.ndarray, sigma=1.0, gamma: float = 1.0, tol: float = 1e-10,
                    max_iter: int = 100_000, V0: np.ndarray | None = None, method: str = "newton",
                    trace: list | None = None) -> np.ndarray:
    """Fixed point of the soft Bellman optimality operator.

    ``method="vi"`` applies the operator repeatedly.  ``method="newton"``
    alternates one operator application with exact evaluation of the
    resulting softmax policy (soft policy iteration, i.e. Newton's method on
    ``V - T V``), which reaches the same fixed point in a handful of linear
    solves.  Both stop when ``||T V - V||_inf <= tol``; ``trace`` collects
    the residual sequence.
    """
    if not 0 < gamma <= 1:
        raise ValueError("discount must lie in (0, 1]")
    V = np.zeros(mdp.n_states) if V0 is None else np.array(V0, dtype=float)
    res = np.inf
    for k in range(max_iter):
        TV, pi, log_pi = soft_bellman(mdp, state_action_values(mdp, u, V, gamma), sigma)
        res = float(np.max(np.abs(TV - V))) if mdp.n_states else 0.0
        if trace is not None:
            trace.append(res)
        if res <= tol:
            return TV if method == "vi" else V
        if not np.isfinite(res):
            break
        if method == "vi":
            V = TV
        elif method == "newton":
            sig = _state_sigma(sigma, mdp.n_states)[mdp.tail]
            r = np.bincount(mdp.tail, weights=pi * (u - sig * log_pi), minlength=mdp.n_states)
            try:
                V = _Factor(mdp, pi, gamma).solve(r)
            except PumcmError:
                # policy nearly traps mass on a cycle; a plain operator step is still safe
                V = TV
        else:
            raise ValueError(f"unknown method {method!r}")
    rho = logit_radius(mdp, u, sigma, gamma)
    hint = f"; soft values diverge on cycles (logit radius {rho:.3g} >= 1)" if rho >= 1 else ""
    raise ConvergenceError(f"value iteration did not converge after {k + 1} iterations "
                           f"(residual {res:.3e}){hint}", res)


# --------------------------------------------------------------------------
# Flows and sensitivities
# --------------------------------------------------------------------------

@dataclass
class DestinationSolution:
    mdp: Mdp
    u: np.ndarray
    sigma: np.ndarray        # per state
    gamma: float
    q: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    pi: np.ndarray
    N: np.ndarray
    x: np.ndarray
    factor: _Factor = field(repr=False)

    def vjp(self, w: np.ndarray) -> np.ndarray:
        return flow_vjp(self, w)


def link_flows(mdp: Mdp, pi: np.ndarray, q: np.ndarray, gamma: float = 1.0,
               factor: _Factor | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Expected visits ``N = (I - gamma M^T)^-1 q`` and flows ``x_a = N(tail a) pi_a``."""
    factor = factor or _Factor(mdp, pi, gamma)
    N = factor.solve(np.asarray(q, dtype=float), transpose=True)
    return pi * N[mdp.tail], N


def solve_destination(mdp: Mdp, u: np.ndarray, q: np.ndarray, sigma=1.0, gamma: float = 1.0,
                      tol: float = 1e-10, max_iter: int = 100_000, V0=None,
                      method: str = "newton") -> DestinationSolution:
    V = value_iteration(mdp, u, sigma, gamma, tol, max_iter, V0, method)
    Q = state_action_values(mdp, u, V, gamma)
    _, pi, _ = soft_bellman(mdp, Q, sigma)
    factor = _Factor(mdp, pi, gamma)
    x, N = link_flows(mdp, pi, q, gamma, factor)
    return DestinationSolution(mdp, np.asarray(u, float), _state_sigma(sigma, mdp.n_states), gamma,
                               np.asarray(q, float), V, Q, pi, N, x, factor)


def flow_vjp(sol: DestinationSolution, w: np.ndarray) -> np.ndarray:
    """Gradient of ``w . x*(u)`` with respect to ``u`` (adjoint of the flow sensitivity).

    ``w`` may be a vector over actions or an (actions, k) matrix of k
    weightings; the result has the same shape.
    """
    mdp, pi, gamma = sol.mdp, sol.pi, sol.gamma
    n = mdp.n_states
    w = np.asarray(w, dtype=float)
    squeeze = w.ndim == 1
    W = w[:, None] if squeeze else w
    P = pi[:, None]
    tail, head = mdp.tail, mdp.head
    inner = head < n
    # visit-count channel: psi = (I - gamma M)^-1 r, r(s) = sum_a w_a pi_a
    r = _segment_sum(P * W, mdp)
    psi = sol.factor.solve(r)
    psi_ext = np.vstack([psi, np.zeros((1, W.shape[1]))])
    omega = sol.N[tail][:, None] * (W + gamma * psi_ext[head])
    # softmax Jacobian per state
    omega_bar = _segment_sum(P * omega, mdp)
    eta = P * (omega - omega_bar[tail]) / sol.sigma[tail][:, None]
    # value channel: dQ = du + gamma P (I - gamma M)^-1 pi du
    zeta = np.zeros((n, W.shape[1]))
    np.add.at(zeta, head[inner], eta[inner])
    phi = sol.factor.solve(zeta, transpose=True)
    g = eta + gamma * P * phi[tail]
    return g[:, 0] if squeeze else g


def _segment_sum(values: np.ndarray, mdp: Mdp) -> np.ndarray:
    return np.add.reduceat(values, mdp.starts, axis=0)


def flow_sensitivity(sol: DestinationSolution) -> np.ndarray:
    """Dense Jacobian ``d x* / d u`` (actions x actions), assembled term by term.

    Uses ``grad x = diag(pi) Lambda grad N + diag(Lambda N) grad pi`` with
    ``grad pi = H(Q) [I + gamma P (I - gamma pi P)^-1 pi]`` and
    ``grad N = (I - gamma P^T pi^T)^-1 gamma P^T diag(Lambda N) grad pi``,
    where ``H`` is the block-diagonal softmax Jacobian.  Intended for small
    graphs and for checking :func:`flow_vjp`.
    """
    mdp, pi, gamma = sol.mdp, sol.pi, sol.gamma
    n, m = mdp.n_states, mdp.n_actions
    Lam = np.zeros((m, n))
    Lam[np.arange(m), mdp.tail] = 1.0
    Pm = np.zeros((m, n))
    inner = mdp.head < n
    Pm[np.flatnonzero(inner), mdp.head[inner]] = 1.0
    Pi = (Lam * pi[:, None]).T                           # states x actions
    H = np.zeros((m, m))
    for s0, s1 in zip(mdp.starts, np.r_[mdp.starts[1:], m]):
        p = pi[s0:s1]
        H[s0:s1, s0:s1] = (np.diag(p) - np.outer(p, p)) / sol.sigma[mdp.tail[s0]]
    K = sol.factor.solve(Pi)                             # (I - gamma pi P)^-1 pi
    grad_pi = H @ (np.eye(m) + gamma * Pm @ K)
    LN = Lam @ sol.N
    grad_N = sol.factor.solve(gamma * Pm.T @ (LN[:, None] * grad_pi), transpose=True)
    return (pi[:, None] * Lam) @ grad_N + LN[:, None] * grad_pi


def value_gradient(sol: DestinationSolution) -> np.ndarray:
    """``d V* / d u`` (states x actions) from the implicit function theorem on V = T V."""
    mdp = sol.mdp
    Pi = np.zeros((mdp.n_states, mdp.n_actions))
    Pi[mdp.tail, np.arange(mdp.n_actions)] = sol.pi
    return sol.factor.solve(Pi)


def flows_from_values(sol: DestinationSolution) -> np.ndarray:
    """Flows as the demand-weighted gradient of the optimal values, ``q grad V*``."""
    return sol.q @ value_gradient(sol)


# --------------------------------------------------------------------------
# All destinations
# --------------------------------------------------------------------------

@dataclass
class PumcmSolution:
    destinations: list[int]
    parts: list[DestinationSolution]

    def __iter__(self):
        return iter(self.parts)

    def __len__(self):
        return len(self.parts)


def solve_all_destinations(mdps: Sequence[Mdp], utilities: Sequence[np.ndarray], demands: Sequence[np.ndarray],
                           sigma=1.0, gamma: float = 1.0, tol: float = 1e-10, max_iter: int = 100_000,
                           V0: Sequence[np.ndarray] | None = None, method: str = "newton",
                           destinations: Sequence[int] | None = None, workers: int = 1) -> PumcmSolution:
    """Independent per-destination solves; results are in input order.

    ``sigma`` may be a scalar or a sequence of per-destination arrays.
    """
    k = len(mdps)
    dests = list(destinations) if destinations is not None else list(range(k))
    sigmas = sigma if isinstance(sigma, (list, tuple)) else [sigma] * k

    def one(i):
        try:
            return solve_destination(mdps[i], utilities[i], demands[i], sigmas[i], gamma, tol, max_iter,
                                     None if V0 is None else V0[i], method)
        except ConvergenceError as exc:
            raise ConvergenceError(f"destination {dests[i]}: {exc}", exc.residual) from exc
        except PumcmError as exc:
            raise PumcmError(f"destination {dests[i]}: {exc}") from exc

    if workers > 1 and k > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, range(k)))
    else:
        parts = [one(i) for i in range(k)]
    return PumcmSolution(dests, parts)


def dump_solution(path, net, sol: PumcmSolution) -> None:
    """Columnar text dump of (V, N) per state and (pi, x) per action."""
    with open(path, "w") as fh:
        fh.write("dest\trecord\tindex\tlabel\tV_or_pi\tN_or_x\n")
        for g, part in zip(net.graphs, sol.parts):
            for s, label in enumerate(g.states):
                fh.write(f"{g.dest}\tstate\t{s}\t{label}\t{part.V[s]:.12g}\t{part.N[s]:.12g}\n")
            for a in range(g.n_actions):
                fh.write(f"{g.dest}\taction\t{a}\t{g.tail[a]}->{g.head[a]}\t{part.pi[a]:.12g}\t{part.x[a]:.12g}\n")
