from pathlib import Path

import numpy as np
import pytest

from maaseq.scenarios import (ScenarioError, SweepSpec, apply_sweep_value, builtin_scenarios, dumps_scenario,
                              load_scenario, loads_scenario, parse_grid, run_sweep, wholesale_analysis, write_sweep)
from maaseq.solver import SolverOptions

SMALL = """
schema_version = 1
name = "tiny"
[network]
road_links = [
  {tail = 1, head = 2, length = 1.0, t0 = 3.0, capacity = 100.0, pt_t0 = 4.0},
  {tail = 2, head = 3, length = 1.0, t0 = 3.0, capacity = 100.0},
]
bidirectional = true
pt_lines = [{name = "L", stops = [1, 2]}]
[demand]
entries = [[1, 3, 50.0]]
[[operators]]
name = "MoD"
kind = "MoD"
[[operators]]
name = "PT"
kind = "PT"
"""


def test_builtins_round_trip():
    names = builtin_scenarios()
    assert {"small_with_maas", "small_without_maas", "siouxfalls_with_maas", "siouxfalls_without_maas"} <= set(names)
    for name in names:
        sc = load_scenario(name)
        again = loads_scenario(dumps_scenario(sc), sc.base_dir)
        assert again == sc
        assert dumps_scenario(again) == dumps_scenario(sc)


def test_small_with_maas_values():
    sc = load_scenario("small_with_maas")
    mp = sc.market_params()
    assert (mp.transfer_penalty_nonmaas, mp.transfer_penalty_maas) == (10.0, 1.0)
    assert mp.wholesale == {"MoD": 1.3, "PT": 1.3}
    assert (mp.bpr_alpha, mp.bpr_beta) == (0.15, 4.0)
    assert (sc.solver.step_size, sc.solver.tol) == (1e-4, 1e-6)
    phys = sc.physical()
    a = {(l.tail, l.head): l for l in phys.road_links}
    assert (a[(1, 2)].length, a[(1, 2)].capacity, a[(1, 2)].t0) == (2.0, 300.0, 5.0)
    line_a = next(l for l in phys.pt_lines if l.name == "A")
    assert line_a.times == (7.5, 6.0, 7.5, 7.5) and line_a.capacities == (300.0, 200.0, 300.0, 300.0)
    assert sc.expansion_config().pt_transfer_nodes == frozenset({3})


def test_siouxfalls_values():
    sc = load_scenario("siouxfalls_with_maas")
    mp = sc.market_params()
    assert mp.wholesale == {"MoD": 1.5, "PT": 1.0}
    assert mp.drive_fixed_cost == 2.0 and mp.drive_var_cost == 0.2
    assert (mp.transfer_penalty_nonmaas, mp.transfer_penalty_maas) == (8.0, 0.5)
    phys = sc.physical()
    assert len(phys.road_links) == 76
    seg = {(l.stops[k], l.stops[k + 1]): (l.times[k], l.capacities[k])
           for l in phys.pt_lines for k in range(len(l.stops) - 1)}
    assert seg[(2, 6)] == pytest.approx((6.0, 1e6))          # 1.2 x free-flow time 5
    assert len(seg) == 26                                    # 13 transit links, both directions
    assert sc.demand_profile().total == pytest.approx(1.2 * 360700.0)


def test_inline_network_and_bidirectional_links():
    sc = loads_scenario(SMALL)
    phys = sc.physical()
    assert {(a.tail, a.head) for a in phys.road_links} == {(1, 2), (2, 1), (2, 3), (3, 2)}
    assert phys.pt_lines[0].times == (4.0,)
    assert sc.build_network().ods == [(1, 3)]


@pytest.mark.parametrize("edit, path", [
    ('capacity = 100.0}', "network.road_links.1.capacity"),
    ('kind = "PT"', "operators.1.kind"),
])
def test_field_path_errors(edit, path):
    bad = {'capacity = 100.0}': SMALL.replace("capacity = 100.0}", "capacity = -5.0}"),
           'kind = "PT"': SMALL.replace('kind = "PT"', 'kind = "Bus"')}[edit]
    with pytest.raises(ScenarioError, match=path.replace(".", r"\.")):
        loads_scenario(bad)


def test_unknown_keys_and_version():
    with pytest.raises(ScenarioError, match="colour"):
        loads_scenario(SMALL + '\n[market]\ncolour = "red"\n')
    with pytest.raises(ScenarioError, match="schema_version"):
        loads_scenario(SMALL.replace("schema_version = 1", "schema_version = 2"))
    with pytest.raises(ScenarioError, match="not a declared PT operator"):
        loads_scenario(SMALL.replace('name = "PT"', 'name = "Bus"'))
    with pytest.raises(ScenarioError, match="wholesale"):
        loads_scenario(SMALL.replace('kind = "PT"', 'kind = "PT"\nwholesale = -1.0'))


def test_missing_files(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text(SMALL.replace("[demand]\nentries = [[1, 3, 50.0]]", '[demand]\ntntp = "nope.tntp"'))
    with pytest.raises(ScenarioError, match="nope.tntp"):
        load_scenario(f)
    with pytest.raises(ScenarioError, match="built-in"):
        load_scenario("no_such_scenario")


def test_grid_parsing_and_sweep_spec():
    assert parse_grid("0:3.5:0.1") == tuple(round(0.1 * k, 12) for k in range(36))
    assert parse_grid("1, 2,4") == (1.0, 2.0, 4.0)
    assert parse_grid("") == ()
    with pytest.raises(ValueError, match="empty"):
        SweepSpec("wholesale", ())
    with pytest.raises(ValueError, match="monotone"):
        SweepSpec("wholesale", (1.0, 2.0, 1.5))
    with pytest.raises(ValueError):
        SweepSpec("vot", (1.0,))
    assert SweepSpec("vot.1-7", (1.0,)).target == (1, 7)


def test_apply_sweep_value():
    sc = load_scenario("small_with_maas")
    assert apply_sweep_value(sc, "wholesale", 2.0).market_params().wholesale == {"MoD": 2.0, "PT": 2.0}
    assert apply_sweep_value(sc, "wholesale.PT", 2.0).market_params().wholesale == {"MoD": 1.3, "PT": 2.0}
    assert apply_sweep_value(sc, "vot.1-7", 1.5).market_params().vot == {(1, 7): 1.5}
    cap = apply_sweep_value(sc, "capacity.3-4", 450.0).physical()
    assert next(a for a in cap.road_links if (a.tail, a.head) == (3, 4)).capacity == 450.0
    with pytest.raises(ScenarioError):
        apply_sweep_value(sc, "capacity.1-8", 1.0)


def test_vot_groups_get_their_own_copies():
    sc = apply_sweep_value(load_scenario("small_with_maas"), "vot.1-7", 2.0)
    base = load_scenario("small_with_maas").build_network()
    assert sc.build_network().n_actions == base.n_actions        # destination 7 has a single OD
    sc = apply_sweep_value(load_scenario("small_with_maas"), "vot.1-5", 2.0)
    assert sc.build_network().n_actions > base.n_actions         # (1,5) and (3,5) now differ


def test_sweep_is_deterministic_and_written(tmp_path):
    sc = load_scenario("small_with_maas")
    spec = SweepSpec("vot.1-7", (1.0, 1.5))
    opts = SolverOptions(max_iter=20, precondition=True)
    a = run_sweep(sc, spec, opts)
    b = run_sweep(sc, spec, opts)
    assert a.csv() == b.csv()
    assert "od_share.Driving" in a.rows[0]
    write_sweep(tmp_path, a)
    assert (tmp_path / "sweep.csv").read_text() == a.csv()
    assert (tmp_path / "xy" / "od_share.Driving.dat").exists()
    assert len(list((tmp_path / "points").glob("*.json"))) == 2


def test_wholesale_analysis():
    class Base:
        profits = {"MoD": 10.0, "PT": 5.0, "Total": 15.0}

        def scalars(self):
            return {f"profit.{k}": v for k, v in self.profits.items()}

    rows = [{"value": v, "profit.MoD": m, "profit.PT": p, "profit.MaaS": q, "profit.Total": m + p + q}
            for v, m, p, q in [(0.0, 8, 4, 9), (1.0, 11, 5, 3), (2.0, 12, 6, -1)]]
    out = wholesale_analysis(rows, Base())
    assert out["argmax"] == {"Total": 0.0, "MoD": 2.0, "PT": 2.0, "MaaS": 0.0}
    assert out["pareto_values"] == [1.0] and out["pareto_lower"] == 1.0
