"""Integrated dual-headway + PPO holding agent and the pure-RL baseline."""

import math
from dataclasses import dataclass

import numpy as np

from .controllers import dual_headway_hold
from .ppo import Transition, forward_policy, forward_value, log_prob, reward, sample_action


def integrated_action(C, delta_a, max_hold):
    """Hold = clip(C + delta_a * H_max, 0, H_max)."""
    if not -1.0 <= delta_a <= 1.0:
        raise ValueError(f"delta_a {delta_a} outside [-1, 1]")
    if C < 0:
        raise ValueError("conventional hold C must be >= 0")
    return min(max(C + delta_a * max_hold, 0.0), max_hold)


def pure_rl_action(delta_a, max_hold):
    """Affine map of [-1, 1] onto [0, H_max]."""
    if not -1.0 <= delta_a <= 1.0:
        raise ValueError(f"delta_a {delta_a} outside [-1, 1]")
    return (delta_a + 1.0) / 2.0 * max_hold


def _overlap(a0, a1, b0, b1):
    return max(0.0, min(a1, b1) - max(a0, b0))


def responsibility_vector(t0, t1, intervals_ahead):
    """Share of the agent's hold [t0, t1] during which each bus ahead was holding.

    ``intervals_ahead[i]`` lists the hold intervals of the (i+1)-th bus ahead.
    The returned vector has one more slot, the agent itself, fixed at 1.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    nu = np.zeros(len(intervals_ahead) + 1)
    nu[-1] = 1.0
    span = t1 - t0
    if span == 0:
        return nu
    for i, ivs in enumerate(intervals_ahead):
        nu[i] = min(1.0, sum(_overlap(t0, t1, s, e) for s, e in ivs) / span)
    return nu


@dataclass
class CriticState:
    H: np.ndarray   # H[n-1]: headway between the (n-1)-th and n-th bus ahead, s
    nu: np.ndarray

    def vector(self, S):
        return np.concatenate([self.H / S, self.nu])


def relative_headways(headways, bus_id):
    """Reorder forward headways so entry n-1 belongs to the (n-1)-th bus ahead of ``bus_id``."""
    N = len(headways)
    return np.array([headways[(bus_id - k) % N] for k in range(N)], dtype=float)


def intervals_ahead(sim, bus_id, t0=None, t1=None):
    N = len(sim.buses)
    out = []
    for k in range(1, N):
        ivs = sim.hold_intervals[(bus_id - k) % N]
        if t0 is not None:
            # holds are appended in time order; only the tail can overlap [t0, t1]
            sel = []
            for s, e in reversed(ivs):
                if e < t0:
                    break
                if s <= t1:
                    sel.append((s, e))
            ivs = sel
        out.append(ivs)
    return out


def assemble_critic_state(sim, bus_id, hold_interval=None):
    """Global state seen by the critic when ``bus_id`` decides.

    ``hold_interval`` is the agent's own (t0, t1) hold; without one the
    responsibility vector only carries the self slot.
    """
    H = relative_headways(sim.headways(), bus_id)
    N = len(H)
    if hold_interval is None:
        nu = np.zeros(N)
        nu[-1] = 1.0
    else:
        t0, t1 = hold_interval
        nu = responsibility_vector(t0, t1, intervals_ahead(sim, bus_id, t0, t1))
    return CriticState(H, nu)


class PolicyController:
    """Holding controller driven by a Gaussian policy network.

    mode "ippo-dh" overlays the policy's delta on the dual-headway hold;
    mode "rl" maps the delta straight onto [0, H_max]. With a ``buffer``
    every completed decision is stored as a Transition.
    """

    def __init__(self, mode, theta, phi, train_config, dh_params=None, S=153.5,
                 buffer=None, rng=None, deterministic=False, zero_overlay=False, episode=0):
        if mode not in ("ippo-dh", "rl"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "ippo-dh" and dh_params is None:
            raise ValueError("ippo-dh needs dual-headway parameters")
        self.mode = mode
        self.name = mode
        self.theta, self.phi = theta, phi
        self.config = train_config
        self.dh = dh_params
        self.S = S
        self.buffer = buffer
        self.rng = rng
        self.deterministic = deterministic or rng is None
        self.zero_overlay = zero_overlay
        self.episode = episode
        self._pending = {}
        self.deltas = []

    def begin(self, sim):
        self._pending = {}

    def _finish(self, sim, bus_id, obs):
        p = self._pending.pop(bus_id, None)
        if p is None:
            return
        H, t0, hold, s_actor, raw, delta, lp = p
        nu = responsibility_vector(t0, t0 + hold, intervals_ahead(sim, bus_id, t0, t0 + hold))
        crit = CriticState(H, nu).vector(self.S)
        r = reward(obs, hold, self.config, self.S)
        self.buffer.add(Transition(s_actor, crit, raw, delta, hold, r, lp,
                                   forward_value(self.phi, crit), t0, bus_id, self.episode))

    def decide(self, sim, bus_id, obs):
        H_max = self.config.max_hold
        s_actor = np.array([obs.h_minus / self.S, obs.h_plus / self.S])
        mean, ls = forward_policy(self.theta, s_actor)
        if self.zero_overlay:
            raw = delta = 0.0
        elif self.deterministic:
            raw = mean
            delta = min(max(mean, -1.0), 1.0)
        else:
            raw, delta = sample_action(mean, ls, self.rng)
        if self.mode == "ippo-dh":
            hold = integrated_action(dual_headway_hold(obs, self.dh, H_max), delta, H_max)
        else:
            hold = pure_rl_action(delta, H_max)
        hold = min(hold, sim.max_hold)
        self.deltas.append(delta)
        if self.buffer is not None:
            self._finish(sim, bus_id, obs)
            H = relative_headways(sim.headways(), bus_id)
            self._pending[bus_id] = (H, sim.now, hold, s_actor, raw, delta,
                                     float(log_prob(mean, ls, raw)))
        return hold

    def end(self, sim):
        """Bootstrap each bus's trajectory from its last, unfinished decision."""
        if self.buffer is None:
            return
        for bus_id, (H, t0, hold, *_rest) in sorted(self._pending.items()):
            nu = responsibility_vector(t0, t0 + hold, intervals_ahead(sim, bus_id, t0, t0 + hold))
            v = forward_value(self.phi, CriticState(H, nu).vector(self.S))
            self.buffer.set_bootstrap(self.episode, bus_id, v)
        self._pending = {}
