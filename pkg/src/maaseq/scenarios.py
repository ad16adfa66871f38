"""Scenario files: schema, loading, the built-in experiments and parameter sweeps.

A scenario is a TOML document with an explicit ``schema_version``.  Unknown
keys are rejected and every validation error names the offending field path.
The network may be given inline or as a ``file`` reference resolved relative
to the scenario file; demand may be inline entries or a TNTP trips file.
"""
from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt, ValidationError, \
    model_validator

from .leaders import Game, MarketParams
from .network import DemandProfile, ExpansionConfig, MultiModalNetwork, PhysicalNetwork, PtLine, RoadLink, \
    build_multimodal
from .solver import SolverOptions
from .tntp import parse_tntp_demand

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --------------------------------------------------------------------------
# Schema
# --------------------------------------------------------------------------

class RoadLinkSpec(_Strict):
    tail: int
    head: int
    length: PositiveFloat
    t0: PositiveFloat
    capacity: PositiveFloat
    pt_t0: Optional[PositiveFloat] = None          # transit time when a PT line runs on the link
    pt_capacity: Optional[PositiveFloat] = None


class PtLineSpec(_Strict):
    name: str
    stops: list[int] = Field(min_length=2)
    times: Optional[list[PositiveFloat]] = None          # default: from the road links
    capacities: Optional[list[PositiveFloat]] = None
    operator: str = "PT"
    bidirectional: bool = False


class NetworkSpec(_Strict):
    file: Optional[str] = None
    nodes: Optional[list[int]] = None
    road_links: list[RoadLinkSpec] = []
    bidirectional: bool = False
    pt_lines: list[PtLineSpec] = []
    pt_time_factor: PositiveFloat = 1.0
    transfer_nodes: list[int] = []

    @model_validator(mode="after")
    def _file_or_inline(self):
        if self.file is not None and (self.road_links or self.pt_lines or self.nodes):
            raise ValueError("give either 'file' or an inline network, not both")
        if self.file is None and not self.road_links:
            raise ValueError("network needs 'file' or at least one road link")
        return self


class DemandSpec(_Strict):
    entries: Optional[list[tuple[int, int, NonNegativeFloat]]] = None
    tntp: Optional[str] = None
    scale: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _one_source(self):
        if (self.entries is None) == (self.tntp is None):
            raise ValueError("give exactly one of 'entries' or 'tntp'")
        return self


class OperatorSpec(_Strict):
    name: str
    kind: Literal["MoD", "PT"]
    wholesale: NonNegativeFloat = 0.0


class ExpansionSpec(_Strict):
    include_maas: bool = True
    include_nonmaas: bool = True
    include_driving: bool = True
    mod_pt_transfers: bool = True
    mod_access_time: PositiveFloat = 1.0
    mod_access_capacity: PositiveFloat = 100.0
    mod_access_scope: Literal["node", "network"] = "node"
    pt_access_time: PositiveFloat = 2.0
    pt_access_capacity: PositiveFloat = 500.0
    duplication: Literal["group", "od"] = "group"


class MarketSpec(_Strict):
    sigma: PositiveFloat = 1.0
    sigma_choice: Optional[PositiveFloat] = None
    discount: float = Field(1.0, gt=0.0, le=1.0)
    vot: list[tuple[int, int, PositiveFloat]] = []
    drive_var_cost: NonNegativeFloat = 0.2
    drive_fixed_cost: NonNegativeFloat = 5.0
    transfer_penalty_maas: NonNegativeFloat = 1.0
    transfer_penalty_nonmaas: NonNegativeFloat = 10.0
    bpr_alpha: PositiveFloat = 0.15
    bpr_beta: PositiveFloat = 4.0
    max_price: PositiveFloat = 50.0
    max_flow_ratio: PositiveFloat = 5.0
    pricing: Literal["rate", "link"] = "rate"
    init_price_fraction: float = Field(0.1, ge=0.0, le=1.0)


class SolverSpec(_Strict):
    step_size: PositiveFloat = 1e-4
    tol: PositiveFloat = 1e-6
    max_iter: PositiveInt = 5000
    residual: Literal["natural", "diff"] = "natural"
    precondition: bool = True
    max_step: Optional[PositiveFloat] = None
    trace_stride: PositiveInt = 1


class Scenario(_Strict):
    schema_version: Literal[1]
    name: str
    description: str = ""
    network: NetworkSpec
    demand: DemandSpec
    operators: list[OperatorSpec] = Field(min_length=1)
    expansion: ExpansionSpec = ExpansionSpec()
    market: MarketSpec = MarketSpec()
    solver: SolverSpec = SolverSpec()
    base_dir: Optional[str] = Field(None, exclude=True)

    @model_validator(mode="after")
    def _operators(self):
        names = [o.name for o in self.operators]
        if len(set(names)) != len(names):
            raise ValueError("duplicate operator names")
        pt = {o.name for o in self.operators if o.kind == "PT"}
        for k, line in enumerate(self.network.pt_lines):
            if line.operator not in pt:
                raise ValueError(f"network.pt_lines.{k}.operator: {line.operator!r} is not a declared PT operator")
        return self

    # ---- resolution ---------------------------------------------------------
    def _path(self, rel: str) -> Path:
        p = Path(rel)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        if not p.exists():
            raise ScenarioError(f"referenced file {rel!r} not found (looked for {p})")
        return p

    def network_spec(self) -> NetworkSpec:
        if self.network.file is None:
            return self.network
        p = self._path(self.network.file)
        data = _read_toml(p)
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"{p}: schema_version {version!r} does not match {SCHEMA_VERSION}")
        try:
            spec = NetworkSpec.model_validate(data)
        except ValidationError as e:
            raise ScenarioError(_format_validation(e, prefix=f"{p.name}: network")) from None
        if spec.file is not None:
            raise ScenarioError(f"{p}: network files cannot reference other files")
        pt = {o.name for o in self.operators if o.kind == "PT"}
        for k, line in enumerate(spec.pt_lines):
            if line.operator not in pt:
                raise ScenarioError(f"{p.name}: network.pt_lines.{k}.operator: {line.operator!r} "
                                    "is not a declared PT operator")
        return spec

    def physical(self) -> PhysicalNetwork:
        spec = self.network_spec()
        links = {}
        for a in spec.road_links:
            links[(a.tail, a.head)] = a
            if spec.bidirectional:
                links.setdefault((a.head, a.tail), a.model_copy(update={"tail": a.head, "head": a.tail}))
        nodes = spec.nodes or sorted({n for a in links for n in a})
        lines = []
        for line in spec.pt_lines:
            times, caps = [], []
            for k, (i, j) in enumerate(zip(line.stops[:-1], line.stops[1:])):
                road = links.get((i, j))
                if line.times is None or line.capacities is None:
                    if road is None:
                        raise ScenarioError(f"PT line {line.name!r}: segment ({i},{j}) has no road link "
                                            "to take its time and capacity from")
                times.append(line.times[k] if line.times is not None else
                             road.pt_t0 if road.pt_t0 is not None else spec.pt_time_factor * road.t0)
                caps.append(line.capacities[k] if line.capacities is not None else
                            road.pt_capacity if road.pt_capacity is not None else road.capacity)
            for name, arr in (("times", line.times), ("capacities", line.capacities)):
                if arr is not None and len(arr) != len(line.stops) - 1:
                    raise ScenarioError(f"PT line {line.name!r}: {name} needs one entry per segment")
            pl = PtLine(line.name, tuple(line.stops), tuple(times), tuple(caps), line.operator)
            lines.append(pl)
            if line.bidirectional:
                lines.append(pl.reversed())
        roads = tuple(RoadLink(i, j, a.length, a.t0, a.capacity) for (i, j), a in links.items())
        return PhysicalNetwork(tuple(nodes), roads, tuple(lines))

    def demand_profile(self) -> DemandProfile:
        d = self.demand
        if d.entries is not None:
            return DemandProfile.from_pairs(d.entries).scaled(d.scale)
        return parse_tntp_demand(self._path(d.tntp).read_bytes(), scale=d.scale)

    def vot_map(self) -> dict:
        return {(o, dd): v for o, dd, v in self.market.vot}

    def expansion_config(self) -> ExpansionConfig:
        e = self.expansion
        vot = self.vot_map()
        return ExpansionConfig(
            mod_operators=tuple(o.name for o in self.operators if o.kind == "MoD"),
            include_maas=e.include_maas, include_nonmaas=e.include_nonmaas, include_driving=e.include_driving,
            pt_transfer_nodes=frozenset(self.network_spec().transfer_nodes), mod_pt_transfers=e.mod_pt_transfers,
            mod_access_time=e.mod_access_time, mod_access_capacity=e.mod_access_capacity,
            mod_access_scope=e.mod_access_scope, pt_access_time=e.pt_access_time,
            pt_access_capacity=e.pt_access_capacity, duplication=e.duplication,
            # ODs with different values of time cannot share a service copy
            od_group=(lambda o, d: vot.get((o, d), 1.0)))

    def market_params(self, workers: int = 1) -> MarketParams:
        m = self.market.model_dump()
        m["vot"] = self.vot_map()
        m["wholesale"] = {o.name: o.wholesale for o in self.operators}
        return MarketParams(**m, workers=workers)

    def solver_options(self, **overrides) -> SolverOptions:
        kw = self.solver.model_dump(exclude_none=True)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SolverOptions(**kw)

    def build_network(self) -> MultiModalNetwork:
        return build_multimodal(self.physical(), self.demand_profile(), self.expansion_config())

    def build_game(self, workers: int = 1) -> Game:
        return Game(self.build_network(), self.market_params(workers))

    # ---- edits ---------------------------------------------------------------
    def updated(self, data_edit) -> "Scenario":
        """Copy with ``data_edit(dict)`` applied to the serialized form, re-validated."""
        d = self.model_dump(mode="json", exclude_none=True)
        data_edit(d)
        return _validate(d, self.base_dir)

    def without_maas(self) -> "Scenario":
        def edit(d):
            d.setdefault("expansion", {})["include_maas"] = False
            d["name"] = d["name"] + "_baseline"
        return self.updated(edit)


def _format_validation(e: ValidationError, prefix: str = "") -> str:
    lines = []
    for err in e.errors():
        path = ".".join(str(p) for p in err["loc"])
        if prefix:
            path = f"{prefix}.{path}" if path else prefix
        lines.append(f"{path}: {err['msg']}")
    return "invalid scenario:\n  " + "\n  ".join(lines)


def _read_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise ScenarioError(f"{path}: {e}") from None


def _validate(data: dict, base_dir) -> Scenario:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version {version!r} does not match {SCHEMA_VERSION}")
    try:
        return Scenario.model_validate({**data, "base_dir": None if base_dir is None else str(base_dir)})
    except ValidationError as e:
        raise ScenarioError(_format_validation(e)) from None


def builtin_dir() -> Path:
    return Path(str(resources.files("maaseq") / "data" / "scenarios"))


def builtin_scenarios() -> list[str]:
    return sorted(p.stem for p in builtin_dir().glob("*.toml"))


def load_scenario(path_or_name: str | os.PathLike) -> Scenario:
    """Load a scenario file, or a built-in scenario by name.

    Referenced network and trips files are resolved and validated eagerly.
    """
    p = Path(path_or_name)
    if not p.exists():
        cand = builtin_dir() / f"{path_or_name}.toml"
        if not cand.exists():
            raise ScenarioError(f"no scenario file {str(path_or_name)!r} and no built-in scenario of that name "
                                f"(built-ins: {', '.join(builtin_scenarios())})")
        p = cand
    sc = loads_scenario(p.read_text(), base_dir=p.parent)
    sc.network_spec()
    if sc.demand.tntp is not None:
        sc._path(sc.demand.tntp)
    return sc


def loads_scenario(text: str, base_dir=None) -> Scenario:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ScenarioError(str(e)) from None
    return _validate(data, base_dir)


def dumps_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(sc.model_dump(mode="json", exclude_none=True))


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """``param`` is ``wholesale``, ``wholesale.<operator>``, ``vot.<o>-<d>`` or ``capacity.<i>-<j>``."""

    param: str
    values: tuple[float, ...]
    warm_start: bool = False

    def __post_init__(self):
        if not self.values:
            raise ValueError("sweep grid is empty")
        diffs = np.diff(np.asarray(self.values, dtype=float))
        if len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("sweep grid must be strictly monotone")
        kind = self.param.split(".", 1)[0]
        if kind not in ("wholesale", "vot", "capacity"):
            raise ValueError(f"unknown sweep parameter {self.param!r}")
        if kind in ("vot", "capacity") and "." not in self.param:
            raise ValueError(f"{kind} sweeps need a target, e.g. {kind}.1-7")

    @property
    def target(self) -> tuple[int, int] | str | None:
        if "." not in self.param:
            return None
        rest = self.param.split(".", 1)[1]
        if self.param.startswith("wholesale"):
            return rest
        i, j = rest.split("-")
        return int(i), int(j)


def parse_grid(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if not text:
        return ()
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        if step == 0:
            raise ValueError("grid step must be nonzero")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + k * step, 12) for k in range(max(n, 0)))
    return tuple(float(v) for v in text.split(",") if v.strip())


def apply_sweep_value(sc: Scenario, param: str, value: float) -> Scenario:
    kind = param.split(".", 1)[0]
    spec = SweepSpec(param, (value,))

    def edit(d):
        if kind == "wholesale":
            for op in d["operators"]:
                if spec.target is None or op["name"] == spec.target:
                    op["wholesale"] = value
            if spec.target is not None and all(op["name"] != spec.target for op in d["operators"]):
                raise ScenarioError(f"no operator {spec.target!r}")
        elif kind == "vot":
            o, dd = spec.target
            m = d.setdefault("market", {})
            m["vot"] = [e for e in m.get("vot", []) if (e[0], e[1]) != (o, dd)] + [[o, dd, value]]
        else:
            i, j = spec.target
            net = d["network"]
            if "file" in net:
                d["network"] = net = sc.network_spec().model_dump(mode="json", exclude_none=True)
            hit = False
            for a in net["road_links"]:
                if (a["tail"], a["head"]) == (i, j):
                    a["capacity"] = value
                    hit = True
            if not hit:
                raise ScenarioError(f"no road link ({i},{j}) to sweep")
    return sc.updated(edit)


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[dict]
    analysis: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    def csv(self) -> str:
        from .metrics import rows_to_csv
        return rows_to_csv(self.rows)


def _sweep_row(spec: SweepSpec, value: float, report) -> dict:
    row = {"value": value, "converged": report.converged, "iterations": report.iterations,
           "residual_natural": report.residual_natural}
    row.update(report.scalars())
    kind = spec.param.split(".", 1)[0]
    if kind == "vot":
        o, d = spec.target
        for o2, d2, *flows in report.od_modes:
            if (o2, d2) == (o, d):
                tot = sum(flows)
                for name, f in zip(("MaaS", "nonMaaS", "Driving"), flows):
                    row[f"od_share.{name}"] = 100.0 * f / tot if tot > 0 else 0.0
    elif kind == "capacity":
        key = "road/{}/{}".format(*spec.target)
        link = next(r for r in report.links if r["link"] == key)
        row["link.flow"] = link["flow"]
        row["link.t"] = link["t"]
    return row


def _solve_point(args):
    from .solver import solve
    data, base_dir, value, param, opts, y0 = args
    sc = apply_sweep_value(_validate(data, base_dir), param, value)
    return solve(sc, opts, y0=y0, name=f"{param}={value:g}", trace=False)


def run_sweep(sc: Scenario, spec: SweepSpec, opts: SolverOptions | None = None, threads: int = 1,
              baseline=None) -> SweepResult:
    """Solve the scenario at every grid value; non-converged points are kept and flagged.

    For wholesale sweeps the analysis also needs the equilibrium without the
    platform, solved here unless ``baseline`` (a report) is given.
    """
    from .solver import solve
    opts = opts or sc.solver_options()
    data = sc.model_dump(mode="json", exclude_none=True)
    reports = []
    if spec.warm_start or threads <= 1:
        y0 = None
        for v in spec.values:
            r = _solve_point((data, sc.base_dir, v, spec.param, opts, y0))
            reports.append(r)
            if spec.warm_start:
                y0 = np.asarray(r.y)
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            reports = list(ex.map(_solve_point, [(data, sc.base_dir, v, spec.param, opts, None)
                                                 for v in spec.values]))
    rows = [_sweep_row(spec, v, r) for v, r in zip(spec.values, reports)]
    analysis = {"param": spec.param, "points": len(rows),
                "non_converged": [row["value"] for row in rows if not row["converged"]]}
    if spec.param.startswith("wholesale"):
        if baseline is None:
            baseline = solve(sc.without_maas(), opts, trace=False)
        analysis.update(wholesale_analysis(rows, baseline))
    return SweepResult(spec, rows, analysis, reports)


def wholesale_analysis(rows: list[dict], baseline) -> dict:
    """Profit maximizers over the grid and the values where every operator gains and the platform breaks even."""
    values = [r["value"] for r in rows]
    ops = [k.split(".", 1)[1] for k in baseline.scalars() if k.startswith("profit.")
           and k not in ("profit.Total", "profit.MaaS")]
    out = {"argmax": {}, "baseline_profit": {m: baseline.profits[m] for m in ops}}
    for key in ["Total"] + ops + ["MaaS"]:
        col = [r.get(f"profit.{key}", np.nan) for r in rows]
        out["argmax"][key] = values[int(np.nanargmax(col))]
    pareto = [r["value"] for r in rows
              if all(r[f"profit.{m}"] >= baseline.profits[m] for m in ops) and r.get("profit.MaaS", 0.0) >= 0]
    out["pareto_values"] = pareto
    out["pareto_lower"] = min(pareto) if pareto else None
    out["pareto_upper"] = max(pareto) if pareto else None
    return out


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_sweep(out: Path, result: SweepResult) -> None:
    """``sweep.csv``, ``analysis.json``, one report per point and ``xy/<metric>.dat`` columns."""
    out = Path(out)
    atomic_write(out / "sweep.csv", result.csv())
    atomic_write(out / "analysis.json", json.dumps(result.analysis, indent=2, default=float) + "\n")
    for k, rep in enumerate(result.reports):
        atomic_write(out / "points" / f"point_{k:03d}.json", rep.to_json())
    metrics = [k for k in result.rows[0] if k not in ("value", "converged")]
    for m in metrics:
        body = "".join(f"{r['value']!r} {float(r[m])!r}\n" for r in result.rows if r.get(m) is not None)
        atomic_write(out / "xy" / f"{m.replace('/', '_')}.dat", f"# {result.spec.param} {m}\n" + body)


def write_report(out: Path, report) -> None:
    from .metrics import rows_to_csv
    out = Path(out)
    atomic_write(out / "report.json", report.to_json() + "\n")
    atomic_write(out / "report.txt", report.to_table())
    atomic_write(out / "trace.csv", report.trace_csv())
    atomic_write(out / "duals.csv", rows_to_csv(report.links))
