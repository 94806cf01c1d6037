"""Recorded output of a simulation run and its CSV form."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sim import PHASE_NAMES

TRAJECTORY_COLUMNS = ("time_s", "bus_id", "ring_position_km", "phase", "onboard_count")
PASSENGER_COLUMNS = ("spawn_time_s", "origin", "destination", "board_time_s", "alight_time_s")
HOLD_COLUMNS = ("time_s", "bus_id", "ring_stop", "hold_s")


class TraceFormatError(ValueError):
    pass


def _fmt(x):
    return "" if math.isnan(x) else repr(float(x))


def _parse_float(s):
    return math.nan if s == "" else float(s)


@dataclass
class SimTrace:
    config: object
    profile: object
    seed: int
    controller: str
    end_time: float
    trajectories: dict   # column arrays: time, bus_id, position, phase, onboard
    passengers: np.ndarray  # (P, 5): spawn, origin, destination, board, alight (NaN = unset)
    holds: np.ndarray       # (K, 4): time, bus_id, ring_stop, hold
    departures: np.ndarray = None  # (D, 3): time, bus_id, ring_stop; in-memory only

    def positions_matrix(self):
        """(sample_times, positions[T, N]) from the trajectory rows."""
        tr = self.trajectories
        n = self.config.n_buses
        times = tr["time"][::n]
        return times, tr["position"].reshape(-1, n)

    def to_csv(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tr = self.trajectories
        with open(out / "trajectories.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJECTORY_COLUMNS)
            for t, b, x, ph, n in zip(tr["time"], tr["bus_id"], tr["position"],
                                      tr["phase"], tr["onboard"]):
                w.writerow((repr(float(t)), int(b), repr(float(x)), PHASE_NAMES[ph], int(n)))
        with open(out / "passengers.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PASSENGER_COLUMNS)
            for s, o, d, bt, at in self.passengers:
                w.writerow((_fmt(s), int(o), int(d), _fmt(bt), _fmt(at)))
        with open(out / "holds.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HOLD_COLUMNS)
            for t, b, j, h in self.holds:
                w.writerow((repr(float(t)), int(b), int(j), repr(float(h))))
        return out

    @classmethod
    def from_csv(cls, in_dir, config, profile=None, seed=0, controller="", end_time=None):
        d = Path(in_dir)
        rows = _read(d / "trajectories.csv", TRAJECTORY_COLUMNS)
        phase_code = {name: k for k, name in enumerate(PHASE_NAMES)}
        traj = {k: [] for k in ("time", "bus_id", "position", "phase", "onboard")}
        for lineno, r in rows:
            try:
                traj["time"].append(float(r[0]))
                traj["bus_id"].append(int(r[1]))
                traj["position"].append(float(r[2]))
                traj["phase"].append(phase_code[r[3]])
                traj["onboard"].append(int(r[4]))
            except (ValueError, KeyError) as exc:
                raise TraceFormatError(f"trajectories.csv row {lineno}: {exc}") from None
        traj = {k: np.array(v, dtype=float if k in ("time", "position") else int)
                for k, v in traj.items()}
        pax = []
        for lineno, r in _read(d / "passengers.csv", PASSENGER_COLUMNS):
            try:
                pax.append((float(r[0]), int(r[1]), int(r[2]),
                            _parse_float(r[3]), _parse_float(r[4])))
            except ValueError as exc:
                raise TraceFormatError(f"passengers.csv row {lineno}: {exc}") from None
        holds = []
        hold_path = d / "holds.csv"
        if hold_path.exists():
            for lineno, r in _read(hold_path, HOLD_COLUMNS):
                try:
                    holds.append((float(r[0]), int(r[1]), int(r[2]), float(r[3])))
                except ValueError as exc:
                    raise TraceFormatError(f"holds.csv row {lineno}: {exc}") from None
        if end_time is None:
            end_time = float(traj["time"][-1]) if len(traj["time"]) else 0.0
        return cls(config, profile, seed, controller, end_time, traj,
                   np.array(pax, dtype=float).reshape(-1, 5),
                   np.array(holds, dtype=float).reshape(-1, 4))


def _read(path, columns):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != columns:
            raise TraceFormatError(f"{path.name}: expected header {columns}, got {header}")
        out = []
        for lineno, r in enumerate(reader, start=2):
            if len(r) != len(columns):
                raise TraceFormatError(f"{path.name} row {lineno}: expected {len(columns)} fields")
            out.append((lineno, r))
        return out
