# What the conventional holding rule does with a pair of headways.
#
#   python demos/02_holding_rules.py

import numpy as np

from busholding.agent import integrated_action, pure_rl_action
from busholding.config import RouteConfig
from busholding.controllers import DualHeadwayParams, dual_headway_hold, optimal_constants
from busholding.sim import HeadwayObservation

route = RouteConfig()
p = DualHeadwayParams.for_route(route, 0.02)
print(f"lambda = {p.lambda_rate:.3f} pax/(km h), alpha* = {p.alpha:.5f}, beta = {p.beta}")
print("optimal constants at lambda*b*v = 0.1:", optimal_constants(0.1, 1.0, 1.0))

# rows: forward headway h-, columns: backward headway h+, both as multiples of S
grid = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5]
print("\nhold (s)   h+ = " + " ".join(f"{g:6.2f}S" for g in grid))
for gm in grid:
    row = [dual_headway_hold(HeadwayObservation(gm * p.S, gp * p.S), p, 180.0) for gp in grid]
    print(f"h- = {gm:4.2f}S " + " ".join(f"{h:7.1f}" for h in row))

# a learned correction shifts the conventional hold, clipped to [0, 180]
C = dual_headway_hold(HeadwayObservation(0.5 * p.S, p.S), p, 180.0)
for d in (-1.0, -0.25, 0.0, 0.25, 1.0):
    print(f"delta {d:+.2f}: integrated {integrated_action(C, d, 180.0):6.1f} s, "
          f"pure policy {pure_rl_action(d, 180.0):6.1f} s")
