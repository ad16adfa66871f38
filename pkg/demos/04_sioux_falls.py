"""
Sioux Falls
===========

Builds the 24-node network with its 528-pair trip table and reports the size
of the expanded problem.  Pass ``--solve`` to also compute both equilibria,
which takes well over half an hour on one core.
"""
import sys

from maaseq import load_scenario, solve
from maaseq.metrics import format_table

sc = load_scenario("siouxfalls_with_maas")
net = sc.build_network()
game = sc.build_game()
stats = net.summary()
print(f"{stats['od_pairs']} OD pairs, {stats['destinations']} destinations, "
      f"{stats['actions']} expanded links, {stats['time_links']} travel-time coordinates, "
      f"{game.layout.size} leader variables")

if "--solve" in sys.argv:
    reports = [solve(load_scenario("siouxfalls_without_maas"), trace=False), solve(sc, trace=False)]
    print(format_table(reports, arrows=True))
