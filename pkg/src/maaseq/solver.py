"""Projected extragradient for box-constrained variational inequalities.

Each iteration is a prediction and a correction,

    y_half = P(y - D G(y)),      y+ = P(y - D G(y_half)),

with ``D = a I`` for the plain method.  The map evaluated at ``y+`` is reused
as the next prediction, so every iteration costs exactly two evaluations of
``G``.  Optionally ``D = 1 / (1/a_max + 2 s)`` is a diagonal preconditioner
built from curvature estimates ``s`` supplied by the problem (see
:meth:`maaseq.leaders.Game.stiffness`); ``a_max`` defaults to ``a`` and
applies only on coordinates the problem marks in ``step_cap_mask``.  Box
fixed points do not depend on a positive diagonal ``D``, so the solution set
is unchanged.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class SolverOptions:
    step_size: float = 1e-4
    tol: float = 1e-6
    max_iter: int = 5000
    residual: str = "natural"          # stopping residual: "natural" or "diff"
    trace_stride: int = 1
    precondition: bool = False
    max_step: float | None = None      # preconditioned step cap; defaults to step_size

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.max_step is not None and not self.max_step >= self.step_size:
            raise ValueError("max_step must be at least step_size")
        if self.residual not in ("natural", "diff"):
            raise ValueError(f"unknown residual {self.residual!r}")


def project(y: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(y, lower), upper)


def natural_residual(y, Gy, lower, upper, step) -> float:
    """``||y - P(y - a G(y))||_2``; zero exactly at solutions of VI(G, box)."""
    return float(np.linalg.norm(y - project(y - step * Gy, lower, upper)))


def extragradient_step(G: Callable, y: np.ndarray, step, lower, upper, Gy=None):
    """One prediction-correction step; returns ``(y_plus, y_half)``.

    ``step`` may be a scalar or a per-coordinate array.
    """
    Gy = G(y) if Gy is None else Gy
    y_half = project(y - step * Gy, lower, upper)
    y_plus = project(y - step * G(y_half), lower, upper)
    return y_plus, y_half


@dataclass
class TraceRow:
    iteration: int
    residual_natural: float
    residual_diff: float
    elapsed_ms: float
    extra: dict = field(default_factory=dict)


@dataclass
class SolveResult:
    y: np.ndarray
    converged: bool
    iterations: int
    residual_natural: float
    residual_diff: float
    evaluations: int
    trace: list
    last: object = None        # problem-specific payload of the final evaluation


class VIProblem:
    """Minimal problem protocol: bounds, a map returning (G, payload) and an optional preconditioner."""

    def __init__(self, G: Callable, lower, upper):
        self._G = G
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)

    def vi_map(self, y, state=None):
        return self._G(y), None, None

    def stiffness(self, y, payload):
        return np.zeros_like(y)

    @property
    def step_cap_mask(self):
        """Coordinates whose preconditioned step may grow up to ``max_step``; the rest stay at ``step_size``."""
        return np.ones_like(self.lower, dtype=bool)


def solve_vi(problem, y0: np.ndarray, opts: SolverOptions = SolverOptions(),
             diagnostics: Callable | None = None) -> SolveResult:
    """Extragradient on ``VI(G, [lower, upper])`` from ``y0``.

    ``problem.vi_map(y, state)`` returns ``(G, payload, state)`` where the
    opaque ``state`` warm-starts the next call.  ``diagnostics(payload)``
    adds per-row fields to the trace.  Non-convergence is reported through
    ``converged`` rather than raised.
    """
    lo, hi = problem.lower, problem.upper
    a = opts.step_size
    cap = np.where(problem.step_cap_mask, opts.max_step or a, a)
    y = project(np.asarray(y0, dtype=float), lo, hi)
    start = time.perf_counter()
    evals = 0

    def ev(z, state):
        nonlocal evals
        evals += 1
        return problem.vi_map(z, state)

    Gy, payload, state = ev(y, None)
    r_nat = natural_residual(y, Gy, lo, hi, a)
    r_diff = np.inf
    trace: list[TraceRow] = []
    converged = False
    k = 0
    while k < opts.max_iter:
        # stiff limit D -> 1/(2 s): extragradient on a scalar linear map contracts
        # by 1 - rho + rho^2 for D = rho/s, which stalls at rho = 1
        D = 1.0 / (1.0 / cap + 2.0 * problem.stiffness(y, payload)) if opts.precondition else a
        y_half = project(y - D * Gy, lo, hi)
        G_half, _, state_half = ev(y_half, state)
        y_new = project(y - D * G_half, lo, hi)
        G_new, payload, state = ev(y_new, state_half)
        k += 1
        r_diff = float(np.linalg.norm(y_new - y))
        y, Gy = y_new, G_new
        r_nat = natural_residual(y, Gy, lo, hi, a)
        if not (np.isfinite(r_nat) and np.all(np.isfinite(y))):
            raise FloatingPointError(f"non-finite iterate at iteration {k}")
        done = (r_nat if opts.residual == "natural" else r_diff) < opts.tol
        if k % opts.trace_stride == 0 or done or k == opts.max_iter:
            extra = diagnostics(y, payload) if diagnostics else {}
            trace.append(TraceRow(k, r_nat, r_diff, 1e3 * (time.perf_counter() - start), extra))
        if done:
            converged = True
            break
    assert evals == 1 + 2 * k, "extragradient must evaluate G exactly twice per iteration"
    return SolveResult(y, converged, k, r_nat, r_diff, evals, trace, payload)


def robustness_samples(y_star_size: int, scales, ratios, reps: int, seed: int):
    """Perturbation designs ``(scale, ratio, rep, mask)``; one seeded stream for the whole table."""
    rng = np.random.default_rng(seed)
    for scale in scales:
        for ratio in ratios:
            for r in range(reps):
                m = max(1, int(round(ratio * y_star_size))) if ratio > 0 else 0
                idx = rng.choice(y_star_size, size=m, replace=False) if m else np.zeros(0, int)
                mask = np.zeros(y_star_size, dtype=bool)
                mask[idx] = True
                yield scale, ratio, r, mask


# --------------------------------------------------------------------------
# Scenario-level entry points
# --------------------------------------------------------------------------

def solve(scenario, opts: SolverOptions | None = None, y0=None, name: str | None = None,
          trace: bool = True, workers: int = 1):
    """Equilibrium report for a scenario; non-convergence is flagged in the report, not raised."""
    from .metrics import build_report, trace_diagnostics
    game = scenario.build_game(workers)
    opts = opts or scenario.solver_options()
    y0 = game.initial_point() if y0 is None else np.asarray(y0, dtype=float)
    result = solve_vi(game, y0, opts, trace_diagnostics(game) if trace else None)
    if not trace:
        result.trace = []
    return build_report(name or scenario.name, game, result)


@dataclass
class ProbeResult:
    baseline: object
    rows: list                 # one per sample: scale, ratio, rep, gap, converged, iterations
    seed: int

    def cells(self) -> list[dict]:
        """Max and mean gap per (scale, ratio) cell."""
        out = {}
        for r in self.rows:
            out.setdefault((r["scale"], r["ratio"]), []).append(r)
        return [{"scale": s, "ratio": q, "max_gap": max(x["gap"] for x in rs),
                 "mean_gap": float(np.mean([x["gap"] for x in rs])),
                 "all_converged": all(x["converged"] for x in rs)}
                for (s, q), rs in out.items()]

    def max_gap(self, scale=None) -> float:
        gaps = [r["gap"] for r in self.rows if scale is None or r["scale"] == scale]
        return max(gaps) if gaps else 0.0


def robustness_probe(scenario, opts: SolverOptions | None = None, scales=(0.01, 0.05, 0.10),
                     ratios=(0.2, 0.4, 0.6, 0.8, 1.0), reps: int = 10, seed: int = 0,
                     baseline=None) -> ProbeResult:
    """Re-solve from multiplicatively shifted starting points and measure the distance to the baseline equilibrium.

    A sample scales a random subset (``ratio`` of the coordinates) of the
    default starting point by ``1 + scale``.
    """
    from .metrics import build_report
    game = scenario.build_game()
    opts = opts or scenario.solver_options()
    y_init = game.initial_point()
    if baseline is None:
        baseline = build_report(scenario.name, game, solve_vi(game, y_init, opts))
    y_star = np.asarray(baseline.y)
    rows = []
    for scale, ratio, rep, mask in robustness_samples(len(y_init), scales, ratios, reps, seed):
        y0 = project(np.where(mask, y_init * (1.0 + scale), y_init), game.lower, game.upper)
        res = solve_vi(game, y0, opts)
        rows.append({"scale": scale, "ratio": ratio, "rep": rep, "coordinates": int(mask.sum()),
                     "gap": float(np.linalg.norm(res.y - y_star)), "converged": bool(res.converged),
                     "iterations": res.iterations})
    return ProbeResult(baseline, rows, seed)
