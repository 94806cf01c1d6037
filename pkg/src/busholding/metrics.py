"""Evaluation metrics over simulation traces and the summary CSV."""

import csv
import math
from dataclasses import dataclass, fields, astuple
from pathlib import Path

import numpy as np

SUMMARY_COLUMNS = ("controller", "xi", "seed", "mean_wait_s", "std_wait_s", "mean_travel_s",
                   "std_travel_s", "mean_hold_s", "std_hold_s", "bunching_events", "pax_served")
WARMUP_S = 7200.0


@dataclass
class MetricsSummary:
    controller: str
    xi: float
    seed: int
    mean_wait_s: float = None
    std_wait_s: float = None
    mean_travel_s: float = None
    std_travel_s: float = None
    mean_hold_s: float = None
    std_hold_s: float = None
    bunching_events: int = 0
    pax_served: int = 0


def _mean_std(x):
    if len(x) == 0:
        return None, None
    return float(np.mean(x)), float(np.std(x))


def passenger_metrics(trace, warmup_s=WARMUP_S):
    """Waiting (spawn to board) and in-vehicle travel (board to alight) statistics.

    Passengers spawned during warm-up are dropped; passengers that never boarded
    are left out of the means and counted under ``not_boarded``. Statistics of an
    empty set are ``None``.
    """
    pax = trace.passengers
    pax = pax[pax[:, 0] >= warmup_s] if len(pax) else pax.reshape(-1, 5)
    if np.any(~np.isnan(pax[:, 3]) & (pax[:, 3] < pax[:, 0])) or \
            np.any(~np.isnan(pax[:, 4]) & (pax[:, 4] < pax[:, 3])):
        raise ValueError("passenger record with board/alight times out of order")
    boarded = ~np.isnan(pax[:, 3])
    served = boarded & ~np.isnan(pax[:, 4])
    # sort first so the reductions do not depend on row order
    wait = np.sort(pax[boarded, 3] - pax[boarded, 0])
    travel = np.sort(pax[served, 4] - pax[served, 3])
    mean_wait, std_wait = _mean_std(wait)
    mean_travel, std_travel = _mean_std(travel)
    return {
        "mean_wait_s": mean_wait, "std_wait_s": std_wait,
        "mean_travel_s": mean_travel, "std_travel_s": std_travel,
        "pax_spawned": int(len(pax)), "pax_served": int(served.sum()),
        "not_boarded": int((~boarded).sum()),
    }


def holding_metrics(trace):
    """Mean and population std over every control decision, zeros included."""
    h = trace.holds[:, 3] if len(trace.holds) else np.zeros(0)
    if len(h) == 0:
        return 0.0, 0.0
    h = np.sort(h)
    return float(np.mean(h)), float(np.std(h))


def time_headways(trace):
    """Sample times and forward time headways (s) of every bus, shape (T, N)."""
    cfg = trace.config
    times, x = trace.positions_matrix()
    ring = cfg.ring_length
    gap = (np.roll(x, 1, axis=1) - x) % ring
    gap[gap > ring - 1e-9] = 0.0
    return times, gap * 3600.0 / cfg.mean_speed


def _runs(mask):
    """(start, stop) index pairs of True runs in a boolean vector."""
    d = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    return zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1))


def detect_bunching(trace, threshold_fraction=0.25, min_duration_s=120.0, t_min=None):
    """Maximal intervals in which some adjacent pair stays closer than the threshold.

    A pair counts once its headway has been below ``threshold_fraction * S`` for
    at least ``min_duration_s``; overlapping pair intervals are merged. A sample
    at time t stands for [t, t + dt). Only samples at or after ``t_min`` are used.
    """
    if threshold_fraction <= 0 or min_duration_s <= 0:
        raise ValueError("thresholds must be positive")
    times, h = time_headways(trace)
    if t_min is not None:
        keep = times >= t_min
        times, h = times[keep], h[keep]
    if len(times) == 0:
        return []
    dt = times[1] - times[0] if len(times) > 1 else 0.0
    end = max(float(trace.end_time), float(times[-1]) + dt)
    limit = threshold_fraction * trace.config.equilibrium_headway
    below = h < limit
    spans = []
    for j in range(h.shape[1]):
        for a, b in _runs(below[:, j]):
            t0 = float(times[a])
            t1 = float(times[b]) if b < len(times) else end
            if t1 - t0 >= min_duration_s:
                spans.append((t0, t1))
    spans.sort()
    merged = []
    for t0, t1 in spans:
        if merged and t0 <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], t1))
        else:
            merged.append((t0, t1))
    return merged


def summarize(trace, xi, seed=None, controller=None, warmup_s=WARMUP_S,
              threshold_fraction=0.25, min_duration_s=120.0, decimals=6):
    pm = passenger_metrics(trace, warmup_s)
    mh, sh = holding_metrics(trace)
    events = detect_bunching(trace, threshold_fraction, min_duration_s)

    def r(v):
        return None if v is None else round(v, decimals)

    return MetricsSummary(
        controller=controller or trace.controller, xi=round(float(xi), decimals),
        seed=int(trace.seed if seed is None else seed),
        mean_wait_s=r(pm["mean_wait_s"]), std_wait_s=r(pm["std_wait_s"]),
        mean_travel_s=r(pm["mean_travel_s"]), std_travel_s=r(pm["std_travel_s"]),
        mean_hold_s=r(mh), std_hold_s=r(sh), bunching_events=len(events),
        pax_served=pm["pax_served"])


def _cell(v, decimals):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.{decimals}f}"
    return str(v)


def export_summary(summaries, path, decimals=6):
    """Write one row per (controller, xi, seed), sorted lexicographically."""
    path = Path(path)
    rows = sorted(summaries, key=lambda s: (s.controller, s.xi, s.seed))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for s in rows:
                w.writerow([_cell(v, decimals) for v in astuple(s)])
    except OSError as exc:
        raise OSError(f"cannot write summary to {path}: {exc}") from exc
    return path


def read_summary(path):
    types = {f.name: f.type for f in fields(MetricsSummary)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                kw = {}
                for k, v in row.items():
                    if k == "controller":
                        kw[k] = v
                    elif v == "":
                        kw[k] = None
                    elif types[k] is int or k in ("seed", "bunching_events", "pax_served"):
                        kw[k] = int(v)
                    else:
                        kw[k] = float(v)
                out.append(MetricsSummary(**kw))
            except ValueError as exc:
                raise ValueError(f"{path} row {lineno}: {exc}") from None
    return out


def expected_wait(departures, lambdas, n_stops, t_min=0.0):
    """Demand-weighted mean wait implied by departure headways at each stop.

    For Poisson arrivals the mean wait between departures is sum(h^2) / (2 sum(h)).
    ``departures`` is a (K, 3) array of (time, bus_id, ring_stop).
    """
    if len(departures) == 0:
        return math.nan
    dep = departures[departures[:, 0] >= t_min]
    num = den = 0.0
    last = 2 * n_stops - 1
    for j in range(2 * n_stops):
        t = np.sort(dep[dep[:, 2] == j, 0])
        if len(t) < 2:
            continue
        h = np.diff(t)
        m = j if j < n_stops else last - j
        w = lambdas[m] if lambdas is not None else 1.0
        num += w * np.sum(h * h) / 2.0
        den += w * np.sum(h)
    return num / den if den > 0 else math.nan
