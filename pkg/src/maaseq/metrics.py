"""Reported quantities of an equilibrium and scenario comparisons."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .leaders import Aggregates, Game
from .network import MultiModalNetwork


class IncomparableReports(ValueError):
    pass


def market_shares(agg: Aggregates, total_demand: float) -> dict:
    """Mode shares in percent from mode-choice link flows.

    The MoD/PT split inside MaaS and non-MaaS follows the first service a
    traveler boards after the mode choice.
    """
    if total_demand <= 0:
        return {k: 0.0 for k in ("MaaS", "MaaS-MoD", "MaaS-PT", "nonMaaS", "nonMaaS-MoD",
                                 "nonMaaS-PT", "Driving")}
    f = 100.0 / total_demand
    acc = agg.access_flow.sum(axis=0)
    modes = agg.mode_flow.sum(axis=0)
    return {
        "MaaS": modes[0] * f,
        "MaaS-MoD": acc[0, 0] * f,
        "MaaS-PT": acc[0, 1] * f,
        "nonMaaS": modes[1] * f,
        "nonMaaS-MoD": acc[1, 0] * f,
        "nonMaaS-PT": acc[1, 1] * f,
        "Driving": modes[2] * f,
    }


def profits(game: Game, y: np.ndarray, agg: Aggregates) -> dict:
    """Operator profits (non-MaaS fares plus wholesale income) and the platform's net revenue."""
    out = {}
    payments = 0.0
    for j, m in enumerate(game.net.operators):
        wholesale = game.wholesale[j] * agg.maas_service[m]
        payments += wholesale
        out[m] = agg.nonmaas_revenue[m] + wholesale
    if game.has_maas:
        out["MaaS"] = float(y[game.layout.p] @ agg.maas_demand) - payments
    out["Total"] = sum(out.values())
    return out


def traveler_welfare(net: MultiModalNetwork, solution) -> float:
    """``sum_od q_od V^d(o)``."""
    W = 0.0
    for g, part in zip(net.graphs, solution.parts):
        for o, s in g.origin_state.items():
            W += net.od_demand[net.od_index(o, g.dest)] * part.V[s]
    return float(W)


def transfer_flow(agg: Aggregates) -> float:
    return float(agg.transfer_flow)


def link_table(game: Game, y: np.ndarray, agg: Aggregates) -> list[dict]:
    """Per time link: ``t``, supply ``z(t)``, aggregate flow, dual and complementarity gap."""
    t = y[game.layout.t]
    z = game.traffic_map(t, agg) + agg.link_flow
    duals = game.capacitated_duals(y, agg)
    rows = []
    for k, tl in enumerate(game.net.time_links):
        rows.append({"link": "/".join(map(str, tl.key)), "kind": tl.kind, "congestible": bool(tl.congestible),
                     "t0": tl.t0, "capacity": tl.capacity,
                     "t": t[k], "supply": z[k], "flow": agg.link_flow[k],
                     "interior": bool(duals["interior"][k]), "lambda": duals["lambda"][k],
                     "gap": duals["gap"][k]})
    return rows


@dataclass
class EquilibriumReport:
    name: str
    converged: bool
    iterations: int
    residual_natural: float
    residual_diff: float
    demand_key: list
    shares: dict
    transfer_flow: float
    profits: dict
    prices: dict
    maas_fares: dict
    traveler_welfare: float
    social_welfare: float
    od_modes: list = field(default_factory=list)     # [o, d, MaaS, nonMaaS, Driving] flows
    links: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    y: list = field(default_factory=list)

    def scalars(self) -> dict:
        """Flat scalar metrics in table order."""
        out = {f"share.{k}": v for k, v in self.shares.items()}
        out["transfer_flow"] = self.transfer_flow
        out.update({f"profit.{k}": v for k, v in self.profits.items()})
        for m, v in self.prices.items():
            if len(v) == 1:
                out[f"price.{m}"] = v[0]
        out["traveler_welfare"] = self.traveler_welfare
        out["social_welfare"] = self.social_welfare
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=float)

    @classmethod
    def from_dict(cls, d: dict) -> "EquilibriumReport":
        return cls(**d)

    def to_table(self) -> str:
        return format_table([self])

    def trace_csv(self) -> str:
        buf = io.StringIO()
        if self.trace:
            keys = list(self.trace[0].keys())
            w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            w.writerows(self.trace)
        return buf.getvalue()

    def links_csv(self) -> str:
        buf = io.StringIO()
        if self.links:
            w = csv.DictWriter(buf, fieldnames=list(self.links[0].keys()), lineterminator="\n")
            w.writeheader()
            w.writerows(self.links)
        return buf.getvalue()


def build_report(name: str, game: Game, result) -> EquilibriumReport:
    """Assemble the report for a solver result whose payload is a :class:`~maaseq.leaders.Evaluation`."""
    ev = result.last
    y, agg, net = result.y, ev.aggregates, game.net
    total = float(net.od_demand.sum())
    W = traveler_welfare(net, ev.solution)
    prof = profits(game, y, agg)
    prices = {m: [float(v) for v in y[game.layout.operator[m]]] for m in net.operators}
    fares = {f"{o}-{d}": float(v) for (o, d), v in zip(net.ods, y[game.layout.p])} if game.has_maas else {}
    trace = []
    for row in result.trace:
        r = {"iteration": row.iteration, "residual_natural": row.residual_natural,
             "residual_diff": row.residual_diff, "elapsed_ms": row.elapsed_ms}
        r.update(row.extra)
        trace.append(r)
    return EquilibriumReport(
        name=name, converged=bool(result.converged), iterations=int(result.iterations),
        residual_natural=float(result.residual_natural), residual_diff=float(result.residual_diff),
        demand_key=[[o, d, float(q)] for (o, d), q in zip(net.ods, net.od_demand)],
        shares={k: float(v) for k, v in market_shares(agg, total).items()
                if game.has_maas or not k.startswith("MaaS")},
        transfer_flow=transfer_flow(agg), profits={k: float(v) for k, v in prof.items()},
        prices=prices, maas_fares=fares, traveler_welfare=W, social_welfare=W + prof["Total"],
        od_modes=[[o, d] + [float(f) for f in row] for (o, d), row in zip(net.ods, agg.mode_flow)],
        links=link_table(game, y, agg), trace=trace, y=[float(v) for v in y])


def trace_diagnostics(game: Game):
    """Callback for the solver trace: profits and welfare at the current iterate."""
    def diag(y, ev):
        prof = profits(game, y, ev.aggregates)
        row = {f"profit_{k}": v for k, v in prof.items()}
        row["welfare"] = traveler_welfare(game.net, ev.solution)
        return row
    return diag


# --------------------------------------------------------------------------
# Comparison and formatting
# --------------------------------------------------------------------------

def compare(a: EquilibriumReport, b: EquilibriumReport) -> list[dict]:
    """Absolute and percentage change of every scalar metric from ``a`` to ``b``."""
    if [list(map(float, r)) for r in a.demand_key] != [list(map(float, r)) for r in b.demand_key]:
        raise IncomparableReports(f"reports {a.name!r} and {b.name!r} were solved on different demand")
    sa, sb = a.scalars(), b.scalars()
    rows = []
    for k in list(sa) + [k for k in sb if k not in sa]:
        va, vb = sa.get(k), sb.get(k)
        delta = None if va is None or vb is None else vb - va
        pct = None if delta is None or va == 0 else 100.0 * delta / abs(va)
        rows.append({"metric": k, "a": va, "b": vb, "delta": delta, "pct": pct})
    return rows


_ROWS = [
    ("Market share (%)", None),
    ("  non-MaaS", "share.nonMaaS"), ("    -MoD", "share.nonMaaS-MoD"), ("    -PT", "share.nonMaaS-PT"),
    ("  MaaS", "share.MaaS"), ("    -MoD", "share.MaaS-MoD"), ("    -PT", "share.MaaS-PT"),
    ("  Driving", "share.Driving"),
    ("Transfer flow", "transfer_flow"),
    ("Profit ($)", None),
]


def _fmt(key: str, v) -> str:
    if v is None:
        return "--"
    return f"{v:.2f}" if key.startswith("price.") else f"{v:.1f}"


def format_table(reports: list[EquilibriumReport], arrows: bool = False) -> str:
    """Aligned text table, one column per report; with ``arrows`` the change from the first column is shown."""
    keys = []
    for r in reports:
        keys += [k for k in r.scalars() if k not in keys]
    rows = list(_ROWS)
    rows += [(f"  {k.split('.', 1)[1]}", k) for k in keys if k.startswith("profit.")]
    rows += [("non-MaaS price", None)]
    rows += [(f"  {k.split('.', 1)[1]}", k) for k in keys if k.startswith("price.")]
    rows += [("Traveler welfare ($)", "traveler_welfare"), ("Social welfare ($)", "social_welfare")]
    scal = [r.scalars() for r in reports]
    width = max(len(lbl) for lbl, _ in rows) + 2
    head = " " * width + "".join(f"{r.name:>24}" for r in reports)
    lines = [head]
    for label, key in rows:
        if key is None:
            lines.append(label)
            continue
        cells = []
        for j, s in enumerate(scal):
            v = s.get(key)
            cell = _fmt(key, v)
            if arrows and j > 0 and v is not None and scal[0].get(key) not in (None, 0):
                d = 100.0 * (v - scal[0][key]) / abs(scal[0][key])
                if key.startswith("share."):
                    d = v - scal[0][key]
                    cell += f" ({'+' if d >= 0 else '-'}{abs(d):.1f}pp)"
                else:
                    cell += f" ({'+' if d >= 0 else '-'}{abs(d):.1f}%)"
            cells.append(f"{cell:>24}")
        lines.append(f"{label:<{width}}" + "".join(cells))
    return "\n".join(lines) + "\n"


def format_compare(rows: list[dict]) -> str:
    w = max(len(r["metric"]) for r in rows) + 2
    out = [f"{'metric':<{w}}{'a':>14}{'b':>14}{'delta':>14}{'change':>10}"]
    for r in rows:
        pct = "" if r["pct"] is None else f"{'↑' if r['pct'] >= 0 else '↓'}{abs(r['pct']):.1f}%"
        out.append(f"{r['metric']:<{w}}{_fmt(r['metric'], r['a']):>14}{_fmt(r['metric'], r['b']):>14}"
                   f"{_fmt(r['metric'], r['delta']):>14}{pct:>10}")
    return "\n".join(out) + "\n"


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        keys = []
        for r in rows:
            keys += [k for k in r if k not in keys]
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()
