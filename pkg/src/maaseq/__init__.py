"""Equilibria of a pricing game between a MaaS platform, mobility operators and a traffic operator."""
from .leaders import Game, MarketParams, bpr_inverse, bpr_time
from .metrics import EquilibriumReport, compare
from .network import DemandProfile, ExpansionConfig, PhysicalNetwork, PtLine, RoadLink, build_multimodal
from .scenarios import Scenario, SweepSpec, load_scenario, run_sweep
from .solver import SolverOptions, robustness_probe, solve, solve_vi
from .tntp import parse_tntp_demand

__version__ = "0.1.0"
