"""Leader problems and the stacked VI map.

The leaders are a virtual traffic operator choosing travel times ``t``, the
MaaS platform choosing OD fares ``p`` and each service operator choosing its
non-MaaS prices.  Traveler utilities are affine in the stacked leader vector,
``u = c + A y``, so every price/time sensitivity the leader maps need is an
adjoint product ``A^T (dx/du)^T w`` computed by :func:`maaseq.pumcm.flow_vjp`.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import pumcm
from .network import LinkKind, MultiModalNetwork, Subnet

log = logging.getLogger(__name__)


class SupplyDomainError(ValueError):
    """Travel time below the free-flow time."""


# --------------------------------------------------------------------------
# Supply curves
# --------------------------------------------------------------------------

def bpr_time(x, t0, kappa, alpha=0.15, beta=4.0):
    """Forward BPR link performance ``t0 (1 + alpha (x/kappa)^beta)``."""
    x = np.asarray(x, dtype=float)
    return t0 * (1.0 + alpha * (x / kappa) ** beta)


def bpr_inverse(t, t0, kappa, alpha=0.15, beta=4.0):
    """Flow sustained at travel time ``t`` (inverse BPR); zero at ``t0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < t0):
        raise SupplyDomainError("travel time below free-flow time")
    return kappa * ((t / t0 - 1.0) / alpha) ** (1.0 / beta)


def supply(t, t0, kappa, congestible, alpha=0.15, beta=4.0):
    """``z(t)``: inverse BPR on congestible links, ``kappa`` on capacitated ones."""
    t, t0, kappa = (np.asarray(v, dtype=float) for v in (t, t0, kappa))
    congestible = np.asarray(congestible, dtype=bool)
    if np.any(t < t0):
        bad = int(np.flatnonzero(t < t0)[0])
        raise SupplyDomainError(f"link {bad}: travel time {t[bad]!r} below free-flow time {t0[bad]!r}")
    z = kappa.copy()
    c = congestible
    z[c] = kappa[c] * ((t[c] / t0[c] - 1.0) / alpha) ** (1.0 / beta)
    return z


# --------------------------------------------------------------------------
# Parameters and layout
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MarketParams:
    """Exogenous model parameters (prices in $, times in minutes)."""

    sigma: float = 1.0                                   # scale inside the service subnetworks
    sigma_choice: float | None = None                    # scale at origin and OD-mode states
    discount: float = 1.0
    vot: dict = field(default_factory=dict)              # (o, d) -> value of time, default 1
    drive_var_cost: float = 0.2
    drive_fixed_cost: float = 5.0
    transfer_penalty_maas: float = 1.0
    transfer_penalty_nonmaas: float = 10.0
    wholesale: dict = field(default_factory=dict)        # operator -> c_m
    bpr_alpha: float = 0.15
    bpr_beta: float = 4.0
    max_price: float = 50.0
    max_flow_ratio: float = 5.0                          # M_t = t0 (1 + alpha R^beta)
    pricing: str = "rate"                                # "rate" or "link"
    init_price_fraction: float = 0.1
    value_tol: float = 1e-10
    value_method: str = "newton"
    workers: int = 1


@dataclass(frozen=True)
class LeaderLayout:
    """Coordinates of the stacked leader vector ``y = (t, p, p~_1, ..., p~_M)``."""

    t: slice
    p: slice | None
    operator: dict                    # operator -> slice
    labels: list

    @property
    def size(self) -> int:
        return len(self.labels)

    def split(self, y: np.ndarray) -> dict:
        out = {"t": y[self.t]}
        if self.p is not None:
            out["p"] = y[self.p]
        for m, s in self.operator.items():
            out[m] = y[s]
        return out


@dataclass
class Aggregates:
    link_flow: np.ndarray            # x-bar per time link
    maas_demand: np.ndarray          # Q per OD (zeros without MaaS)
    maas_service: dict               # operator -> X_m (MaaS service-link flow)
    nonmaas_service: dict            # operator -> non-MaaS service-link flow
    nonmaas_revenue: dict            # operator -> sum(price * flow) on non-MaaS links
    mode_flow: np.ndarray            # OD x {MaaS, nonMaaS, Driving}
    access_flow: np.ndarray          # OD x subnet(MaaS, nonMaaS) x {MoD, PT}
    transfer_flow: float


@dataclass
class Evaluation:
    y: np.ndarray
    G: np.ndarray
    solution: pumcm.PumcmSolution
    aggregates: Aggregates
    utilities: list


class Game:
    """Stacked VI map ``G(y)`` for a built network and parameter set."""

    def __init__(self, net: MultiModalNetwork, params: MarketParams | None = None):
        self.net = net
        self.params = params = params or MarketParams()
        if params.pricing not in ("rate", "link"):
            raise ValueError(f"unknown pricing parameterization {params.pricing!r}")
        for m, c in params.wholesale.items():
            if c < 0:
                raise ValueError(f"wholesale price of {m} must be nonnegative")
        self.has_maas = any(np.any(g.subnet == Subnet.MAAS) for g in net.graphs)
        tls = net.time_links
        self.t0 = np.array([tl.t0 for tl in tls])
        self.kappa = np.array([tl.capacity for tl in tls])
        self.congestible = np.array([tl.congestible for tl in tls])
        self.wholesale = np.array([params.wholesale.get(m, 0.0) for m in net.operators])
        self._build_layout()
        self._build_affine()
        self.sigmas = self._sigmas()
        self.evaluations = 0

    # ---- layout ---------------------------------------------------------
    def _build_layout(self):
        net, params = self.net, self.params
        labels = [("t",) + tl.key for tl in net.time_links]
        t = slice(0, len(labels))
        p = None
        if self.has_maas:
            p = slice(len(labels), len(labels) + len(net.ods))
            labels += [("p", o, d) for o, d in net.ods]
        # priced elements per operator: rate -> one scalar; link -> one per service link
        self.price_elements: dict[str, list] = {}
        operator = {}
        for m in net.operators:
            kind = net.operator_kind[m]
            if params.pricing == "rate":
                elems = [("rate",)]
            elif kind == "MoD":
                elems = [("road", a.tail, a.head) for a in net.physical.road_links]
            else:
                elems = [("seg",) + s for s in net.pt_segments
                         if next(l for l in net.lines if l.name == s[0]).operator == m]
            start = len(labels)
            labels += [("price", m) + e for e in elems]
            operator[m] = slice(start, len(labels))
            self.price_elements[m] = elems
        self.layout = LeaderLayout(t, p, operator, labels)

        R, a, b = params.max_flow_ratio, params.bpr_alpha, params.bpr_beta
        lo = np.zeros(len(labels))
        hi = np.full(len(labels), params.max_price)
        # first float above t0 on congestible links: below about 0.06 flow units
        # the exact equilibrium time lies between t0 and its successor
        lo[t] = np.where(self.congestible, np.nextafter(self.t0, np.inf), self.t0)
        hi[t] = self.t0 * (1.0 + a * R ** b)
        self.lower, self.upper = lo, hi

    def initial_point(self) -> np.ndarray:
        y = np.full(self.layout.size, self.params.init_price_fraction * self.params.max_price)
        y[self.layout.t] = self.lower[self.layout.t]
        return y

    # ---- utilities ------------------------------------------------------
    def vot_of(self, g) -> np.ndarray:
        od = np.where(g.vot_od >= 0, g.vot_od, g.group_od)
        vot = np.array([self.params.vot.get(self.net.ods[k], 1.0) for k in range(len(self.net.ods))] or [1.0])
        return vot[od]

    def _build_affine(self):
        net, pr = self.net, self.params
        lay = self.layout
        op_names = net.operators
        road_len = np.array([a.length for a in net.physical.road_links])
        elem_col = {}
        for m in op_names:
            for j, e in enumerate(self.price_elements[m]):
                elem_col[(m,) + e] = lay.operator[m].start + j
        seg_key = net.pt_segments
        self.const, self.A, self.price_coef, self.price_col, self.masks = [], [], [], [], []
        for g in net.graphs:
            n = g.n_actions
            c = np.zeros(n)
            rows, cols, vals = [], [], []
            vot = self.vot_of(g)
            timed = g.time_link >= 0
            rows.append(np.flatnonzero(timed))
            cols.append(g.time_link[timed])
            vals.append(-vot[timed])
            is_road = g.kind == LinkKind.ROAD
            is_ride = g.kind == LinkKind.PT_RIDE
            drive = is_road & (g.subnet == Subnet.DRIVE)
            c[drive] -= pr.drive_var_cost * road_len[g.road[drive]]
            c[g.kind == LinkKind.DRIVE_ACCESS] -= pr.drive_fixed_cost
            tr = g.kind == LinkKind.TRANSFER
            c[tr & (g.subnet == Subnet.MAAS)] -= pr.transfer_penalty_maas
            c[tr & (g.subnet == Subnet.NONMAAS)] -= pr.transfer_penalty_nonmaas
            maas_dummy = (g.kind == LinkKind.MODE_CHOICE) & (g.subnet == Subnet.DUMMY) & self._maas_choice(g)
            if self.has_maas:
                idx = np.flatnonzero(maas_dummy)
                rows.append(idx)
                cols.append(lay.p.start + g.od[idx])
                vals.append(-np.ones(len(idx)))
            # non-MaaS service prices
            nm = (is_road | is_ride) & (g.subnet == Subnet.NONMAAS)
            pcol = np.full(n, -1)
            pcoef = np.zeros(n)
            for a in np.flatnonzero(nm):
                m = op_names[g.operator[a]]
                if g.kind[a] == LinkKind.ROAD:
                    coef = road_len[g.road[a]] if pr.pricing == "rate" else 1.0
                    key = (m, "rate") if pr.pricing == "rate" else (m, "road") + (
                        net.physical.road_links[g.road[a]].tail, net.physical.road_links[g.road[a]].head)
                else:
                    coef = 1.0
                    key = (m, "rate") if pr.pricing == "rate" else (m, "seg") + seg_key[g.pt_seg[a]]
                pcol[a], pcoef[a] = elem_col[key], coef
            idx = np.flatnonzero(pcol >= 0)
            rows.append(idx)
            cols.append(pcol[idx])
            vals.append(-pcoef[idx])
            A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, lay.size))
            service = is_road & (g.subnet != Subnet.DRIVE) | is_ride
            self.const.append(c)
            self.A.append(A)
            self.price_coef.append(pcoef)
            self.price_col.append(pcol)
            self.masks.append({
                "maas_dummy": maas_dummy,
                "maas_service": service & (g.subnet == Subnet.MAAS),
                "nonmaas_service": service & (g.subnet == Subnet.NONMAAS),
                "free": g.kind == LinkKind.MODE_CHOICE,
            })

    def _maas_choice(self, g) -> np.ndarray:
        # a mode-choice action enters the MaaS OD-mode node
        labels = g.states + [("dest",)]
        heads = [labels[h] for h in g.head]
        return np.array([h[0] == "odmode" and h[2] == "MaaS" for h in heads], dtype=bool)

    def utilities(self, y: np.ndarray) -> list[np.ndarray]:
        us = [c + A @ y for c, A in zip(self.const, self.A)]
        for g, u, mk in zip(self.net.graphs, us, self.masks):
            try:
                pumcm.check_utilities(u, mk["free"])
            except pumcm.UtilityError as exc:
                a = exc.action
                raise pumcm.UtilityError(f"destination {g.dest}: action {a} ({g.states[g.tail[a]]} -> "
                                       f"kind {LinkKind(g.kind[a]).name}) has utility {u[a]!r}; "
                                       f"utilities must be negative", a) from None
        return us

    # ---- follower and aggregates -----------------------------------------
    def follow(self, y: np.ndarray, V0=None) -> tuple[pumcm.PumcmSolution, list]:
        us = self.utilities(y)
        mdps = self._mdps()
        sol = pumcm.solve_all_destinations(
            mdps, us, [g.q for g in self.net.graphs], sigma=self.sigmas, gamma=self.params.discount,
            tol=self.params.value_tol, V0=V0, method=self.params.value_method,
            destinations=self.net.destinations, workers=self.params.workers)
        return sol, us

    def _sigmas(self) -> list[np.ndarray]:
        pr = self.params
        out = []
        for g in self.net.graphs:
            sig = np.full(g.n_states, float(pr.sigma))
            if pr.sigma_choice is not None:
                sig[list(g.origin_state.values())] = pr.sigma_choice
                sig[list(g.odmode_state.values())] = pr.sigma_choice
            out.append(sig)
        return out

    def _mdps(self):
        if not hasattr(self, "_mdp_cache"):
            self._mdp_cache = [pumcm.Mdp.from_graph(g) for g in self.net.graphs]
        return self._mdp_cache

    def aggregate(self, y: np.ndarray, sol: pumcm.PumcmSolution) -> Aggregates:
        net = self.net
        K, nod, nop = len(net.time_links), len(net.ods), len(net.operators)
        xbar = np.zeros(K)
        Q = np.zeros(nod)
        Xm = np.zeros(nop)
        Xt = np.zeros(nop)
        rev = np.zeros(nop)
        modes = np.zeros((nod, 3))
        access = np.zeros((nod, 2, 2))
        transfers = 0.0
        col_sub = {int(Subnet.MAAS): 0, int(Subnet.NONMAAS): 1, int(Subnet.DRIVE): 2}
        for g, part, mk, pcol, pcoef in zip(net.graphs, sol.parts, self.masks, self.price_col, self.price_coef):
            x = part.x
            tl = g.time_link >= 0
            xbar += np.bincount(g.time_link[tl], weights=x[tl], minlength=K)
            if self.has_maas:
                Q += np.bincount(g.od[mk["maas_dummy"]], weights=x[mk["maas_dummy"]], minlength=nod)
            ms, ns = mk["maas_service"], mk["nonmaas_service"]
            Xm += np.bincount(g.operator[ms], weights=x[ms], minlength=nop)
            Xt += np.bincount(g.operator[ns], weights=x[ns], minlength=nop)
            prices = np.zeros(g.n_actions)
            prices[ns] = pcoef[ns] * y[pcol[ns]]
            rev += np.bincount(g.operator[ns], weights=prices[ns] * x[ns], minlength=nop)
            transfers += float(x[g.kind == LinkKind.TRANSFER].sum())
            # mode choice: the head state of a dummy link is an OD-mode node
            for (o, sn), s in g.odmode_state.items():
                k = net.od_index(o, g.dest)
                sel = (g.head == s) & (g.kind == LinkKind.MODE_CHOICE)
                modes[k, col_sub[sn]] += x[sel].sum()
                if sn in (Subnet.MAAS, Subnet.NONMAAS):
                    out = g.tail == s
                    access[k, col_sub[sn], 0] += x[out & (g.kind == LinkKind.MOD_ACCESS)].sum()
                    access[k, col_sub[sn], 1] += x[out & (g.kind == LinkKind.PT_ACCESS)].sum()
        ops = net.operators
        return Aggregates(xbar, Q, dict(zip(ops, Xm)), dict(zip(ops, Xt)), dict(zip(ops, rev)),
                          modes, access, transfers)

    # ---- VI map ----------------------------------------------------------
    def evaluate(self, y: np.ndarray, V0=None) -> Evaluation:
        """``G(y)`` with the follower solve and aggregates it was built from."""
        y = np.asarray(y, dtype=float)
        sol, us = self.follow(y, V0)
        agg = self.aggregate(y, sol)
        G = np.empty(self.layout.size)
        G[self.layout.t] = self.traffic_map(y[self.layout.t], agg)
        grads = self._leader_gradients(y, sol)
        if self.has_maas:
            G[self.layout.p] = -(agg.maas_demand + grads[self.layout.p, 0])
        for j, m in enumerate(self.net.operators):
            s = self.layout.operator[m]
            G[s] = -(self._direct_revenue(m, sol) + grads[s, 1 + j])
        self.evaluations += 1
        return Evaluation(y, G, sol, agg, us)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.evaluate(y).G

    def vi_map(self, y: np.ndarray, state=None):
        """Solver protocol: ``(G, evaluation, warm start for the next call)``."""
        ev = self.evaluate(y, state)
        return ev.G, ev, [part.V for part in ev.solution.parts]

    def traffic_map(self, t: np.ndarray, agg: Aggregates) -> np.ndarray:
        """``g_t = z(t) - x-bar``."""
        z = supply(t, self.t0, self.kappa, self.congestible, self.params.bpr_alpha, self.params.bpr_beta)
        return z - agg.link_flow

    def _weights(self, g, y, mk, pcol, pcoef) -> np.ndarray:
        """Profit weights per action: column 0 platform, then one per operator."""
        n, nop = g.n_actions, len(self.net.operators)
        W = np.zeros((n, 1 + nop))
        c = self.wholesale
        if self.has_maas:
            dm = mk["maas_dummy"]
            W[dm, 0] = y[self.layout.p][g.od[dm]]
            ms = mk["maas_service"]
            W[ms, 0] = -c[g.operator[ms]]
            W[ms, 1 + g.operator[ms]] = c[g.operator[ms]]
        ns = mk["nonmaas_service"]
        W[ns, 1 + g.operator[ns]] = pcoef[ns] * y[pcol[ns]]
        return W

    def _leader_gradients(self, y, sol) -> np.ndarray:
        """Indirect profit gradients ``A^T J^T w`` summed over destinations (dim x (1+M))."""
        total = np.zeros((self.layout.size, 1 + len(self.net.operators)))
        for g, part, A, mk, pcol, pcoef in zip(self.net.graphs, sol.parts, self.A, self.masks,
                                               self.price_col, self.price_coef):
            W = self._weights(g, y, mk, pcol, pcoef)
            total += A.T @ pumcm.flow_vjp(part, W)
        return total

    def _direct_revenue(self, m: str, sol) -> np.ndarray:
        j = self.net.operators.index(m)
        s = self.layout.operator[m]
        out = np.zeros(s.stop - s.start)
        for g, part, mk, pcol, pcoef in zip(self.net.graphs, sol.parts, self.masks, self.price_col, self.price_coef):
            sel = mk["nonmaas_service"] & (g.operator == j)
            out += np.bincount(pcol[sel] - s.start, weights=pcoef[sel] * part.x[sel], minlength=len(out))
        return out

    # ---- diagnostics -----------------------------------------------------
    def stiffness(self, y: np.ndarray, ev: Evaluation) -> np.ndarray:
        """Per-coordinate curvature estimate of ``G`` for step preconditioning.

        Time coordinates use ``|d x-bar_k / d t_k|`` plus, on congestible
        links, the secant slope of the supply curve toward the flow-matching
        time (``dz/dt`` is unbounded near the free-flow time).  Price
        coordinates use ``2 |dD_i/dy_i|`` where ``D_i`` is the demand the
        price multiplies (MaaS trips of an OD, or priced service volume),
        the leading term of the own-price derivative of marginal revenue.
        """
        agg = ev.aggregates
        s = self._demand_slopes(ev.solution)
        t = y[self.layout.t]
        a, b = self.params.bpr_alpha, self.params.bpr_beta
        c = self.congestible
        z = supply(t, self.t0, self.kappa, c, a, b)
        target = bpr_time(agg.link_flow, self.t0, self.kappa, a, b)
        # the denominator is floored at one ulp: near t0 the flow-matching time
        # may not be representable and the slope is then effectively unbounded
        dt = np.maximum(np.abs(t - target), 2 * np.spacing(t))
        sec = np.abs(z - agg.link_flow) / dt
        s[self.layout.t] += np.where(c, sec, 0.0)
        tail = slice(self.layout.t.stop, self.layout.size)
        s[tail] *= 2.0
        return s

    @property
    def step_cap_mask(self) -> np.ndarray:
        """Prices only: near ``t0`` the supply curve is too steep for a curvature-scaled step on times."""
        mask = np.ones(self.layout.size, dtype=bool)
        mask[self.layout.t] = False
        return mask

    def _demand_slopes(self, sol) -> np.ndarray:
        """``|dD_i/dy_i|``: own-coordinate slope of the link flow or demand each coordinate acts on."""
        lay = self.layout
        diag = np.zeros(lay.size)
        for g, part, A, mk, pcol, pcoef in zip(self.net.graphs, sol.parts, self.A, self.masks,
                                               self.price_col, self.price_coef):
            coords, cols = [], []
            for k in np.unique(g.time_link[g.time_link >= 0]):
                coords.append(lay.t.start + k)
                cols.append((g.time_link == k).astype(float))
            if self.has_maas:
                dm = mk["maas_dummy"]
                for k in np.unique(g.od[dm]):
                    coords.append(lay.p.start + k)
                    cols.append((dm & (g.od == k)).astype(float))
            ns = mk["nonmaas_service"]
            for j in np.unique(pcol[ns]):
                coords.append(j)
                cols.append(np.where(ns & (pcol == j), pcoef, 0.0))
            if not coords:
                continue
            V = pumcm.flow_vjp(part, np.column_stack(cols))
            diag[coords] += np.asarray(A[:, coords].multiply(V).sum(axis=0)).ravel()
        return np.abs(diag)

    def capacitated_duals(self, y: np.ndarray, agg: Aggregates, atol: float = 1e-12) -> dict:
        """Delay duals on capacitated links and the per-link complementarity gap of the time block.

        ``lambda = t - t0`` on capacitated links (zero on congestible ones).
        With ``g = z(t) - x-bar`` the gap is ``|g|`` where ``t`` is above its
        lower bound and ``max(0, -g)`` at the bound, in flow units.
        """
        t = y[self.layout.t]
        lo = self.lower[self.layout.t]
        g = self.traffic_map(t, agg)
        interior = t > lo + atol * np.maximum(1.0, lo)
        lam = np.where(self.congestible, 0.0, t - self.t0)
        gap = np.where(interior, np.abs(g), np.maximum(0.0, -g))
        return {"lambda": lam, "gap": gap, "interior": interior}

    def check_elasticity(self, threshold: float = 1e-3) -> float:
        """Largest |dQ/dp| at ``p = M_p``; warns when fares at the bound still move demand."""
        if not self.has_maas:
            return 0.0
        y = self.initial_point()
        y[self.layout.p] = self.params.max_price
        sol, _ = self.follow(y)
        worst = 0.0
        for g, part, A, mk in zip(self.net.graphs, sol.parts, self.A, self.masks):
            for k in np.unique(g.od[mk["maas_dummy"]]):
                w = (mk["maas_dummy"] & (g.od == k)).astype(float)
                grad = A.T @ pumcm.flow_vjp(part, w)
                worst = max(worst, float(np.max(np.abs(grad[self.layout.p]))))
        if worst > threshold:
            warnings.warn(f"MaaS demand elasticity {worst:.3g} at the fare bound exceeds {threshold}; "
                          f"consider a larger max_price", RuntimeWarning, stacklevel=2)
        return worst
