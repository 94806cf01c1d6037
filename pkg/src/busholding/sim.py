"""Event-driven simulation of a bus fleet on a two-way corridor.

The corridor of length L is modelled as a ring of length 2L: outbound stops sit
at their nominal positions and inbound stops are mirrored at 2L - x. Bus ``i``
follows bus ``i - 1`` (bus 0 follows bus N-1); buses never overtake, a faster
follower queues behind its leader.
"""

import bisect
import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .config import (ArrivalProfile, RouteConfig, make_profile, stream_rng,
                     STREAM_ARRIVALS, STREAM_SIGNALS, STREAM_SPEEDS)

TRAVELING, DWELLING, HOLDING, SIGNAL_STOPPED = 0, 1, 2, 3
PHASE_NAMES = ("traveling", "dwelling", "holding", "signal-stopped")

# Event kinds; the value is the tie-break order at equal times.
SPAWN_BATCH = 0
HOLD_EXPIRE = 1      # bus leaves a stop
SIGNAL_RELEASE = 2   # bus leaves an intersection
ARRIVE = 3           # bus reaches a stop or an intersection
DEPART_STOP = 4      # passenger exchange finished, controller picks the hold

SPAWN_BATCH_S = 3600.0
_EPS = 1e-9


class SimulationError(RuntimeError):
    """Internal consistency failure; indicates a bug, not a recoverable state."""


class HoldingError(ValueError):
    pass


@dataclass(frozen=True)
class HeadwayObservation:
    h_minus: float  # forward headway, s
    h_plus: float   # backward headway, s


class Passenger:
    __slots__ = ("spawn_time", "origin", "destination", "board_time", "alight_time")

    def __init__(self, spawn_time, origin, destination):
        self.spawn_time = spawn_time
        self.origin = origin
        self.destination = destination
        self.board_time = None
        self.alight_time = None

    def ring_stops(self, n_stops):
        """(origin, destination) as indices of directional stops on the ring."""
        if self.destination > self.origin:
            return self.origin, self.destination
        last = 2 * n_stops - 1
        return last - self.origin, last - self.destination

    def as_tuple(self):
        nan = math.nan
        return (self.spawn_time, self.origin, self.destination,
                nan if self.board_time is None else self.board_time,
                nan if self.alight_time is None else self.alight_time)


class Bus:
    __slots__ = ("bus_id", "odo", "next_point", "point", "speed", "phase", "phase_end_time",
                 "dep_time", "dep_odo", "target_odo", "last_odo", "blocked", "onboard",
                 "n_onboard", "checked_until", "rng_speed", "rng_signal")

    def __init__(self, bus_id):
        self.bus_id = bus_id
        self.blocked = False
        self.onboard = {}
        self.n_onboard = 0
        self.phase = TRAVELING

    def raw_odo(self, t):
        if self.phase != TRAVELING:
            return self.odo
        x = self.dep_odo + (t - self.dep_time) * self.speed / 3600.0
        return min(x, self.target_odo)


def draw_segment_speed(rng, config=None):
    """Segment speed in km/h from N(mean, std^2) truncated below at ``min_speed``."""
    config = config or RouteConfig()
    while True:
        v = rng.normal(config.mean_speed, config.speed_std)
        if v >= config.min_speed:
            return float(v)


def dwell_time(n_board, n_alight, config=None):
    config = config or RouteConfig()
    if n_board < 0 or n_alight < 0:
        raise ValueError("passenger counts must be >= 0")
    return config.board_time * n_board + config.alight_time * n_alight


def spawn_passengers(stop, t0, t1, profile, rng):
    """Poisson arrivals at physical stop ``stop`` over [t0, t1) seconds.

    A passenger travels in a direction that has at least one downstream stop,
    chosen uniformly, to a destination drawn uniformly from those stops.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    lam = profile.lambdas[stop]
    n_stops = len(profile.lambdas)
    n = int(rng.poisson(lam * (t1 - t0) / 60.0)) if lam > 0 and t1 > t0 else 0
    if n == 0:
        return []
    times = np.sort(rng.uniform(t0, t1, size=n))
    outbound = list(range(stop + 1, n_stops))
    inbound = list(range(0, stop))
    choices = [d for d in (outbound, inbound) if d]
    out = []
    for t in times:
        side = choices[rng.integers(len(choices))] if len(choices) > 1 else choices[0]
        out.append(Passenger(float(t), stop, side[rng.integers(len(side))]))
    return out


def _as_controller(controller):
    if hasattr(controller, "decide"):
        return controller
    if callable(controller):
        return _FunctionController(controller)
    raise TypeError("controller must define decide() or be callable on an observation")


class _FunctionController:
    def __init__(self, fn):
        self.fn = fn
        self.name = getattr(fn, "__name__", "function")

    def decide(self, sim, bus_id, obs):
        return self.fn(obs)


class Simulation:
    """Mutable simulation state plus the event loop."""

    def __init__(self, config, profile, seed, max_hold=180.0, record_dt=10.0,
                 check_invariants=False):
        self.config = config.validate()
        self.profile = profile
        self.seed = int(seed)
        self.max_hold = float(max_hold)
        self.record_dt = float(record_dt)
        self.check_invariants = check_invariants
        if len(profile.lambdas) != config.n_stops:
            raise ValueError("profile length does not match the number of stops")

        M = config.n_stops
        L = config.length_km
        ring = config.ring_length
        pts = [(x, j) for j, x in enumerate(config.stop_positions)]
        pts += [(ring - x, 2 * M - 1 - j) for j, x in enumerate(config.stop_positions)]
        pts += [(x, -1) for x in config.intersection_positions]
        pts += [(ring - x, -1) for x in config.intersection_positions]
        pts.sort()
        self.point_pos = [p for p, _ in pts]
        self.point_stop = [s for _, s in pts]
        self.ring = ring
        self.ring_stop_pos = [x for x in config.stop_positions] + [
            2 * L - x for x in reversed(config.stop_positions)]

        self.now = 0.0
        self.queue = []
        self.waiting = [deque() for _ in range(2 * M)]
        self.passengers = []
        self.spawn_times = [[] for _ in range(M)]
        self.n_boarded = np.zeros(M, dtype=int)
        self.n_alighted = np.zeros(M, dtype=int)
        self.hold_log = []       # (decision_time, bus_id, ring_stop, hold)
        self.hold_intervals = [[] for _ in range(config.n_buses)]
        self.departure_log = []  # (time, bus_id, ring_stop)
        self.rng_arrivals = stream_rng(seed, STREAM_ARRIVALS)
        self.controller = None
        self._rows = []
        self._next_sample = 0.0
        self.n_events = 0

        N = config.n_buses
        spacing = ring / N
        self.buses = []
        for i in range(N):
            b = Bus(i)
            b.rng_speed = stream_rng(seed, STREAM_SPEEDS, i)
            b.rng_signal = stream_rng(seed, STREAM_SIGNALS, i)
            b.odo = (N - 1 - i) * spacing
            b.last_odo = b.odo
            b.speed = draw_segment_speed(b.rng_speed, config)
            k = bisect.bisect_right(self.point_pos, b.odo)
            b.point = k - 1
            self._start_travel(b, 0.0)
            self.buses.append(b)
        self._push(0.0, SPAWN_BATCH, -1)

    # ---- geometry -------------------------------------------------------

    def _lead_offset(self, i):
        return self.ring if i == 0 else 0.0

    def odometers(self, t=None):
        """Unwrapped ring positions (km) of all buses, clamped so none passes its leader."""
        t = self.now if t is None else t
        x = [b.raw_odo(t) for b in self.buses]
        n = len(x)
        ring = self.ring
        for _ in range(n + 2):
            changed = False
            for i in range(n):
                lead = x[i - 1] + (ring if i == 0 else 0.0)
                if x[i] > lead:
                    x[i] = lead
                    changed = True
            if not changed:
                break
        return x

    def ring_positions(self, t=None):
        return [v % self.ring for v in self.odometers(t)]

    def forward_gaps(self, t=None):
        x = self.odometers(t)
        return [x[i - 1] + self._lead_offset(i) - x[i] for i in range(len(x))]

    def headways(self, t=None):
        """Forward time headways (s) of all buses at nominal speed."""
        k = 3600.0 / self.config.mean_speed
        return [g * k for g in self.forward_gaps(t)]

    # ---- events ---------------------------------------------------------

    def _push(self, t, kind, subject):
        heapq.heappush(self.queue, (t, kind, subject))

    def _start_travel(self, b, t):
        nxt = (b.point + 1) % len(self.point_pos)
        dist = (self.point_pos[nxt] - b.odo) % self.ring
        if dist <= _EPS:
            dist += self.ring if len(self.point_pos) == 1 else 0.0
        b.next_point = nxt
        b.dep_time = t
        b.dep_odo = b.odo
        b.target_odo = b.odo + dist
        b.phase = TRAVELING
        b.phase_end_time = t + dist / b.speed * 3600.0
        self._push(b.phase_end_time, ARRIVE, b.bus_id)

    def _spawn_batch(self, t):
        t1 = t + SPAWN_BATCH_S
        M = self.config.n_stops
        for m in range(M):
            for p in spawn_passengers(m, t, t1, self.profile, self.rng_arrivals):
                self.passengers.append(p)
                self.spawn_times[m].append(p.spawn_time)
                self.waiting[p.ring_stops(M)[0]].append(p)
        self._push(t1, SPAWN_BATCH, -1)

    def _board(self, b, stop, t, at_spawn):
        q = self.waiting[stop]
        M = self.config.n_stops
        n = 0
        while q and q[0].spawn_time <= t:
            p = q.popleft()
            p.board_time = p.spawn_time if at_spawn else t
            dest = p.ring_stops(M)[1]
            b.onboard.setdefault(dest, []).append(p)
            self.n_boarded[p.origin] += 1
            n += 1
        b.n_onboard += n
        return n

    def _arrive(self, b, t):
        lead = self.buses[b.bus_id - 1]
        if lead.last_odo + self._lead_offset(b.bus_id) < b.target_odo - _EPS:
            b.blocked = True
            return
        b.blocked = False
        b.odo = b.target_odo
        b.last_odo = b.odo
        b.point = b.next_point
        f = self.buses[(b.bus_id + 1) % len(self.buses)]
        if f.blocked and f.target_odo <= b.odo + self._lead_offset(f.bus_id) + _EPS:
            f.blocked = False
            self._push(t, ARRIVE, f.bus_id)

        stop = self.point_stop[b.point]
        if stop < 0:
            cfg = self.config
            if b.rng_signal.random() < cfg.intersection_red_prob:
                b.phase = SIGNAL_STOPPED
                b.phase_end_time = t + b.rng_signal.exponential(cfg.intersection_red_mean) \
                    if cfg.intersection_red_mean > 0 else t
                self._push(b.phase_end_time, SIGNAL_RELEASE, b.bus_id)
            else:
                self._start_travel(b, t)
            return

        leaving = b.onboard.pop(stop, [])
        for p in leaving:
            p.alight_time = t
            self.n_alighted[p.origin] += 1
        b.n_onboard -= len(leaving)
        n_board = self._board(b, stop, t, at_spawn=False)
        b.phase = DWELLING
        b.checked_until = t
        b.phase_end_time = t + dwell_time(n_board, len(leaving), self.config)
        self._push(b.phase_end_time, DEPART_STOP, b.bus_id)

    def _exchange_done(self, b, t):
        stop = self.point_stop[b.point]
        late = self._board(b, stop, t, at_spawn=True)
        b.checked_until = t
        if late:
            b.phase_end_time = t + self.config.board_time * late
            self._push(b.phase_end_time, DEPART_STOP, b.bus_id)
            return
        obs = observe_headways(self, b.bus_id)
        hold = self.controller.decide(self, b.bus_id, obs)
        apply_holding(self, b.bus_id, hold)

    def _leave_stop(self, b, t):
        stop = self.point_stop[b.point]
        self._board(b, stop, t, at_spawn=True)
        self.departure_log.append((t, b.bus_id, stop))
        b.speed = draw_segment_speed(b.rng_speed, self.config)
        self._start_travel(b, t)

    def _record(self, t):
        pos = self.ring_positions(t)
        for b, x in zip(self.buses, pos):
            self._rows.append((t, b.bus_id, x, b.phase, b.n_onboard))

    def step(self):
        """Process one event; returns its (time, kind, subject)."""
        t, kind, i = heapq.heappop(self.queue)
        if t < self.now - _EPS:
            raise SimulationError(f"event queue inversion: {t} < {self.now}")
        self.now = t
        self.n_events += 1
        if kind == SPAWN_BATCH:
            self._spawn_batch(t)
        else:
            b = self.buses[i]
            if kind == ARRIVE:
                self._arrive(b, t)
            elif kind == DEPART_STOP:
                self._exchange_done(b, t)
            elif kind == HOLD_EXPIRE:
                self._leave_stop(b, t)
            elif kind == SIGNAL_RELEASE:
                self._start_travel(b, t)
        if self.check_invariants:
            self.assert_conservation()
        return t, kind, i

    def run(self, controller, duration):
        if not duration > 0:
            raise ValueError("duration must be positive")
        self.controller = _as_controller(controller)
        if hasattr(self.controller, "begin"):
            self.controller.begin(self)
        end = self.now + duration
        dt = self.record_dt
        while self.queue and self.queue[0][0] < end:
            t_next = self.queue[0][0]
            while self._next_sample < t_next:
                self._record(self._next_sample)
                self._next_sample += dt
            self.step()
        while self._next_sample < end:
            self._record(self._next_sample)
            self._next_sample += dt
        self.now = end
        if hasattr(self.controller, "end"):
            self.controller.end(self)
        return self.trace(end)

    # ---- bookkeeping ----------------------------------------------------

    def conservation(self, t=None):
        """Per-origin (spawned, waiting, onboard, alighted) counts at time t."""
        t = self.now if t is None else t
        M = self.config.n_stops
        spawned = np.array([bisect.bisect_right(s, t) for s in self.spawn_times])
        waiting = np.zeros(M, dtype=int)
        for q in self.waiting:
            for p in q:
                if p.spawn_time > t:
                    break
                waiting[p.origin] += 1
        onboard = np.zeros(M, dtype=int)
        for b in self.buses:
            for group in b.onboard.values():
                for p in group:
                    onboard[p.origin] += 1
        return spawned, waiting, onboard, self.n_alighted.copy()

    def assert_conservation(self):
        spawned, waiting, onboard, alighted = self.conservation()
        if not np.array_equal(spawned, waiting + onboard + alighted):
            raise SimulationError(f"passenger conservation violated at t={self.now}")

    def trace(self, end=None):
        end = self.now if end is None else end
        name = getattr(self.controller, "name", type(self.controller).__name__)
        rows = self._rows
        traj = {
            "time": np.array([r[0] for r in rows], dtype=float),
            "bus_id": np.array([r[1] for r in rows], dtype=int),
            "position": np.array([r[2] for r in rows], dtype=float),
            "phase": np.array([r[3] for r in rows], dtype=int),
            "onboard": np.array([r[4] for r in rows], dtype=int),
        }
        pax = [p.as_tuple() for p in self.passengers if p.spawn_time < end]
        pax = np.array(pax, dtype=float).reshape(-1, 5)
        holds = np.array(self.hold_log, dtype=float).reshape(-1, 4)
        from .trace import SimTrace
        deps = np.array(self.departure_log, dtype=float).reshape(-1, 3)
        return SimTrace(self.config, self.profile, self.seed, name, end, traj, pax, holds, deps)


def build_environment(config, xi, seed, **kwargs):
    """Fresh simulation with evenly spaced, empty buses and a random demand profile."""
    config.validate()
    profile = make_profile(config.n_stops, xi, seed)
    return Simulation(config, profile, seed, **kwargs), profile


def observe_headways(sim, bus_id):
    h = sim.headways()
    n = len(h)
    if not 0 <= bus_id < n:
        raise IndexError(bus_id)
    return HeadwayObservation(h[bus_id], h[(bus_id + 1) % n])


def apply_holding(sim, bus_id, hold):
    """Hold a bus that has finished its passenger exchange for ``hold`` seconds."""
    hold = float(hold)
    if not 0.0 <= hold <= sim.max_hold:
        raise HoldingError(f"hold {hold} outside [0, {sim.max_hold}]")
    b = sim.buses[bus_id]
    stop = sim.point_stop[b.point]
    if b.phase != DWELLING or stop < 0 or b.checked_until != sim.now:
        raise HoldingError(f"bus {bus_id} is not ready to depart a stop")
    t = sim.now
    b.phase = HOLDING
    b.phase_end_time = t + hold
    sim.hold_log.append((t, bus_id, stop, hold))
    sim.hold_intervals[bus_id].append((t, t + hold))
    sim._push(b.phase_end_time, HOLD_EXPIRE, bus_id)
    return sim


def run(sim, controller, duration):
    return sim.run(controller, duration)
