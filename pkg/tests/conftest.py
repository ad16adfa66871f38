import numpy as np
import pytest

from maaseq.network import DemandProfile, ExpansionConfig, PhysicalNetwork, PtLine, RoadLink, build_multimodal
from maaseq.pumcm import Mdp, logit_radius


def random_mdp(rng, n_states=6, extra=8, cyclic=True):
    """Random MDP whose states all reach the absorbing state ``n_states`` along the chain s -> s+1."""
    tail, head = [], []
    for s in range(n_states):
        tail.append(s)
        head.append(s + 1)
    for _ in range(extra):
        s = int(rng.integers(n_states))
        h = int(rng.integers(n_states + 1)) if cyclic else int(rng.integers(s + 1, n_states + 1))
        if h != s:
            tail.append(s)
            head.append(h)
    order = np.argsort(tail, kind="stable")
    return Mdp(n_states, np.asarray(tail)[order], np.asarray(head)[order])


def random_utilities(rng, mdp, low=-3.0, high=-0.2, sigma=2.0, radius=0.9):
    """Negative utilities, shifted down until cycles cannot pay for themselves at scale ``sigma``."""
    u = rng.uniform(low, high, mdp.n_actions)
    rho = logit_radius(mdp, u, sigma)
    if rho > radius:
        u -= sigma * np.log(rho / radius)
    return u


def random_physical(rng, n_nodes=6):
    """Ring of two-way roads with random chords, one transit line along part of the ring and 2-3 OD pairs."""
    nodes = tuple(range(1, n_nodes + 1))
    pairs = set()
    for i in range(n_nodes):
        a, b = nodes[i], nodes[(i + 1) % n_nodes]
        pairs |= {(a, b), (b, a)}
    for _ in range(n_nodes // 2):
        a, b = rng.choice(nodes, 2, replace=False)
        pairs.add((int(a), int(b)))
    links = tuple(RoadLink(a, b, float(rng.uniform(1, 3)), float(rng.uniform(2, 8)), float(rng.uniform(100, 400)))
                  for a, b in sorted(pairs))
    stops = nodes[:4]
    line = PtLine("L", stops, tuple(rng.uniform(4, 9, 3)), tuple(rng.uniform(200, 400, 3)))
    ods = set()
    while len(ods) < int(rng.integers(2, 4)):
        o, d = rng.choice(nodes, 2, replace=False)
        ods.add((int(o), int(d)))
    dem = DemandProfile.from_pairs([(o, d, float(rng.uniform(50, 300))) for o, d in sorted(ods)])
    return PhysicalNetwork(nodes, links, (line,)), dem


def random_network(seed, include_maas=True):
    rng = np.random.default_rng(seed)
    base, dem = random_physical(rng)
    cfg = ExpansionConfig(pt_transfer_nodes=frozenset({3}), include_maas=include_maas)
    return build_multimodal(base, dem, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance bookkeeping -------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
