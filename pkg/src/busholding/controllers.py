"""Conventional holding controllers: no control and dual-headway control."""

import math
from dataclasses import dataclass


class SingularityError(ArithmeticError):
    """Speed-form control evaluated outside its validity region (1 - lambda*b*h <= 0)."""


@dataclass
class DualHeadwayParams:
    alpha: float          # weight of the backward-headway term
    beta: float = 0.6     # delay per unit headway increase
    S: float = 153.5      # equilibrium headway, s
    lambda_rate: float = 0.0  # pax / (km h)
    b: float = 3.0 / 3600.0   # h / pax
    v_bar: float = 27.0       # km/h
    delta: float = 0.0        # slack, km/h
    r: float = 1.0

    @property
    def lbv(self):
        """lambda * b * v_bar, in 1/h."""
        return self.lambda_rate * self.b * self.v_bar

    @classmethod
    def for_route(cls, config, xi, beta=0.6, r=1.0, alpha=None):
        """Parameters for a corridor whose stops all see mean demand ``xi`` pax/min.

        Demand is spread over both directions of the 2L ring.
        """
        lam = xi * 60.0 * config.n_stops / config.ring_length
        b = config.board_time / 3600.0
        a_star, d_star = optimal_constants(lam, b, config.mean_speed, r)
        return cls(alpha=a_star if alpha is None else alpha, beta=beta,
                   S=config.equilibrium_headway, lambda_rate=lam, b=b,
                   v_bar=config.mean_speed, delta=d_star, r=r)


def optimal_constants(lambda_rate, b, v_bar, r=1.0):
    """(alpha*, delta*) = (0.63 lbv, 5.0 r sqrt(lbv)) with lbv = lambda * b * v_bar."""
    lbv = lambda_rate * b * v_bar
    if lbv < 0:
        raise ValueError("lambda * b * v_bar must be >= 0")
    return 0.63 * lbv, 5.0 * r * math.sqrt(lbv)


def dual_headway_control(h_minus, h_plus, p):
    """Speed correction C_n in km/h.

    Headways come in seconds and are converted to spacings (km) at v_bar, which
    makes every term a speed: lbv [1/h] * km, alpha [1/h] * km, delta [km/h].
    """
    to_km = p.v_bar / 3600.0
    fwd, bwd, S = h_minus * to_km, h_plus * to_km, p.S * to_km
    lam_b = p.lambda_rate * p.b
    denom = 1.0 - lam_b * fwd
    if denom <= 0:
        raise SingularityError(f"1 - lambda*b*h = {denom} <= 0")
    return (p.lbv * (fwd - S) + p.alpha * (fwd - bwd) - p.delta) / denom


def dual_headway_speed(h, n, p):
    """Commanded speed of bus ``n`` given the forward-headway vector ``h`` (s).

    The backward headway of bus n is the forward headway of its follower,
    ``h[(n + 1) % N]``. The result is clipped to (0, v_bar]: control only slows a bus.
    """
    N = len(h)
    c = dual_headway_control(h[n], h[(n + 1) % N], p)
    v = p.v_bar + c
    return min(max(v, 1e-9), p.v_bar)


def dual_headway_hold(obs, p, max_hold):
    """Hold (alpha+beta)(S-h-) - alpha(S-h+), clipped to [0, max_hold]."""
    raw = (p.alpha + p.beta) * (p.S - obs.h_minus) - p.alpha * (p.S - obs.h_plus)
    return min(max(raw, 0.0), max_hold)


def no_control(obs):
    return 0.0


class NoControl:
    name = "none"

    def decide(self, sim, bus_id, obs):
        return 0.0


class DualHeadwayHolding:
    name = "dual-headway"

    def __init__(self, params):
        self.params = params

    def decide(self, sim, bus_id, obs):
        return dual_headway_hold(obs, self.params, sim.max_hold)
