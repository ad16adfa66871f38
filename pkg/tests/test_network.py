import numpy as np
import pytest

from maaseq.network import (DemandProfile, ExpansionConfig, LinkKind, NetworkError, PhysicalNetwork, PtLine,
                            RoadLink, Subnet, build_multimodal, incidence_maps, validate)
from maaseq.scenarios import load_scenario

from conftest import random_network


@pytest.fixture(scope="module")
def small():
    return load_scenario("small_with_maas").build_network()


def test_small_network_is_valid(small):
    assert validate(small) == []
    assert small.destinations == [5, 7]
    assert sorted(small.ods) == [(1, 5), (1, 7), (3, 5)]


def test_build_is_idempotent():
    sc = load_scenario("small_with_maas")
    a, b = sc.build_network(), sc.build_network()
    assert a.serialize() == b.serialize()
    assert a.fingerprint() == b.fingerprint()


@pytest.mark.parametrize("seed", range(5))
def test_every_action_has_one_tail(seed):
    net = random_network(seed)
    L = incidence_maps(net).action_state
    assert np.all(np.asarray(L.sum(axis=1)).ravel() == 1)
    assert L.nnz == net.n_actions


def test_time_coupling_is_total(small):
    untimed = {LinkKind.MODE_CHOICE, LinkKind.DRIVE_ACCESS}
    for g in small.graphs:
        for a in range(g.n_actions):
            assert (g.time_link[a] < 0) == (LinkKind(g.kind[a]) in untimed)


def test_aggregation_counts_match_sioux_falls():
    net = load_scenario("siouxfalls_with_maas").build_network()
    D = incidence_maps(net).aggregation
    timed = sum(int(np.sum(g.time_link >= 0)) for g in net.graphs)
    per_link = np.asarray(D.sum(axis=0)).ravel()
    assert per_link.sum() == timed
    assert np.all(np.asarray(D.sum(axis=1)).ravel() <= 1)


def test_driving_copies_share_the_physical_link():
    sc = load_scenario("small_with_maas")
    net = build_multimodal(sc.physical(), sc.demand_profile(),
                           ExpansionConfig(pt_transfer_nodes=frozenset({3}), duplication="od"))
    k12 = net.time_link_index(("road", 1, 2))
    road12 = [i for i, a in enumerate(net.physical.road_links) if (a.tail, a.head) == (1, 2)][0]
    drive_copies = 0
    for g in net.graphs:
        on = g.road == road12
        assert np.all(g.time_link[on] == k12)
        drive_copies += int(np.sum(on & (g.subnet == Subnet.DRIVE)))
    # the two ODs leaving node 1 each own a driving copy; (3,5) cannot reach node 1
    assert drive_copies == 2


def test_subnetworks_are_disjoint(small):
    for g in small.graphs:
        assert set(np.unique(g.subnet)) <= {int(s) for s in Subnet}
    assert validate(small) == []


def _ring(n):
    links = []
    for i in range(1, n + 1):
        j = i % n + 1
        links += [RoadLink(i, j, 1.0, 3.0, 200.0), RoadLink(j, i, 1.0, 3.0, 200.0)]
    return tuple(links)


def test_action_count_is_affine_in_od_pairs():
    base = PhysicalNetwork(tuple(range(1, 7)), _ring(6), (PtLine("L", (1, 2, 3, 4), (5.0, 5.0, 5.0), (300.0,) * 3),))
    cfg = ExpansionConfig(duplication="od", prune=False)
    ods = [(1, 6), (2, 6), (3, 6)]       # every origin can board the line
    sizes = [build_multimodal(base, DemandProfile.from_pairs([(o, d, 10.0) for o, d in ods[:k]]), cfg).n_actions
             for k in (1, 2, 3)]
    assert sizes[2] - sizes[1] == sizes[1] - sizes[0] > 0


def test_unreachable_driving_is_reported():
    # node 5 hangs off the ring by a transit line only
    base = PhysicalNetwork(tuple(range(1, 6)), _ring(4), (PtLine("L", (1, 5), (4.0,), (100.0,)),))
    dem = DemandProfile.from_pairs([(5, 3, 10.0)])
    with pytest.raises(NetworkError):
        build_multimodal(base, dem, ExpansionConfig(include_maas=False))
    net = build_multimodal(base, dem, ExpansionConfig(include_maas=False, strict=False))
    assert (5, 3, "Driving") in net.violations
    assert any("Driving" in v and "5" in v for v in validate(net))


def test_unused_pt_line_is_not_a_violation():
    base = PhysicalNetwork(tuple(range(1, 5)), _ring(4), (PtLine("L", (1, 2), (4.0,), (100.0,)),))
    net = build_multimodal(base, DemandProfile.from_pairs([(3, 4, 10.0)]), ExpansionConfig())
    assert validate(net) == []


@pytest.mark.parametrize("line, msg", [
    (PtLine("L", (1, 9), (4.0,), (100.0,)), "dangling stop"),
    (PtLine("L", (1, 2), (4.0, 1.0), (100.0,)), "one time and capacity"),
    (PtLine("L", (1, 1), (4.0,), (100.0,)), "distinct"),
])
def test_malformed_lines_are_rejected(line, msg):
    base = PhysicalNetwork(tuple(range(1, 5)), _ring(4), (line,))
    with pytest.raises(NetworkError, match=msg):
        base.validate()


def test_nonpositive_capacity_is_rejected():
    links = _ring(4)[:-1] + (RoadLink(1, 4, 1.0, 3.0, 0.0),)
    with pytest.raises(NetworkError, match="positive"):
        PhysicalNetwork(tuple(range(1, 5)), links).validate()


def test_demand_profile_rejects_duplicates_and_negatives():
    with pytest.raises(NetworkError):
        DemandProfile.from_pairs([(1, 2, 1.0), (1, 2, 2.0)])
    with pytest.raises(NetworkError):
        DemandProfile.from_pairs([(1, 2, -1.0)])
    with pytest.raises(NetworkError):
        DemandProfile(()).validate()


def test_without_maas_has_no_maas_actions():
    net = load_scenario("small_without_maas").build_network()
    assert all(not np.any(g.subnet == Subnet.MAAS) for g in net.graphs)


def test_network_wide_access_has_one_time_link_per_operator():
    sc = load_scenario("small_with_maas")
    net = build_multimodal(sc.physical(), sc.demand_profile(),
                           ExpansionConfig(pt_transfer_nodes=frozenset({3}), mod_access_scope="network"))
    assert [tl.key for tl in net.time_links if tl.kind == "mod_access"] == [("mod_access", "MoD")]
