import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from busholding.config import RouteConfig
from busholding.metrics import (MetricsSummary, SUMMARY_COLUMNS, detect_bunching,
                                expected_wait, export_summary, holding_metrics,
                                passenger_metrics, read_summary, summarize)
from busholding.trace import SimTrace, TraceFormatError

from conftest import make_sim, synthetic_trace

NAN = math.nan
TWO = RouteConfig(n_buses=2)       # S = 18.42 / 54 h = 1228 s


def pax_trace(rows, holds=None):
    return synthetic_trace(np.zeros((2, 2)), np.array([0.0, 10.0]), TWO, holds=holds,
                           passengers=rows)


def test_single_passenger():
    m = passenger_metrics(pax_trace([(100, 0, 3, 160, 400)]), warmup_s=0)
    assert m["mean_wait_s"] == 60.0 and m["mean_travel_s"] == 240.0
    assert m["std_wait_s"] == 0.0 and m["pax_served"] == 1


def test_empty_trace_metrics_absent():
    m = passenger_metrics(pax_trace(np.zeros((0, 5))))
    assert m["mean_wait_s"] is None and m["std_travel_s"] is None
    assert m["pax_served"] == 0 and m["pax_spawned"] == 0


def test_three_passengers_against_statistics_module():
    rows = [(7300, 0, 3, 7360, 7600), (7400, 2, 9, 7530, 7900), (7500, 5, 1, 7620, NAN),
            (7000, 1, 2, 7010, 7100)]           # spawned in the warm-up, dropped
    m = passenger_metrics(pax_trace(rows))
    assert m["mean_wait_s"] == pytest.approx(statistics.mean([60, 130, 120]))
    assert m["std_wait_s"] == pytest.approx(statistics.pstdev([60, 130, 120]))
    assert m["mean_travel_s"] == pytest.approx(305.0)
    assert m["std_travel_s"] == pytest.approx(65.0)
    assert (m["pax_spawned"], m["pax_served"], m["not_boarded"]) == (3, 2, 0)


def test_unboarded_passengers_counted_not_averaged():
    m = passenger_metrics(pax_trace([(0, 0, 3, 30, 90), (5, 1, 4, NAN, NAN)]), warmup_s=0)
    assert m["mean_wait_s"] == 30.0 and m["not_boarded"] == 1


def test_out_of_order_record_rejected():
    with pytest.raises(ValueError):
        passenger_metrics(pax_trace([(100, 0, 3, 90, 400)]), warmup_s=0)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(0, 900), st.floats(0, 3000),
                          st.booleans()), min_size=1, max_size=30), st.randoms())
def test_metrics_permutation_invariant(raw, rnd):
    rows = [(s, 0, 1, s + w, s + w + tr if served else NAN) for s, w, tr, served in raw]
    shuffled = rows[:]
    rnd.shuffle(shuffled)
    assert passenger_metrics(pax_trace(rows), 0) == passenger_metrics(pax_trace(shuffled), 0)
    h = [(i, 0, 0, r[1]) for i, r in enumerate(raw)]
    hs = h[:]
    rnd.shuffle(hs)
    assert holding_metrics(pax_trace(rows, h)) == holding_metrics(pax_trace(rows, hs))


def test_holding_metrics():
    h = [(0, 0, 0, 0.0), (1, 1, 0, 60.0), (2, 0, 1, 120.0)]
    mean, std = holding_metrics(pax_trace([], h))
    assert mean == 60.0 and std == pytest.approx(48.98979, abs=1e-5)
    assert holding_metrics(pax_trace([], [(0, 0, 0, 30.0)] * 4)) == (30.0, 0.0)
    assert holding_metrics(pax_trace([])) == (0.0, 0.0)


# ---- bunching -----------------------------------------------------------------

def two_bus_trace(gap_km, times):
    lead = (times * 27.0 / 3600.0) % TWO.ring_length
    return synthetic_trace(np.stack([lead, (lead - gap_km) % TWO.ring_length], axis=1),
                           times, TWO)


def test_even_fleet_has_no_bunching():
    times = np.arange(0.0, 7200.0, 10.0)
    assert detect_bunching(two_bus_trace(np.full_like(times, 9.21), times)) == []


def test_glued_buses_bunch_for_the_whole_run():
    times = np.arange(0.0, 7200.0, 10.0)
    assert detect_bunching(two_bus_trace(np.zeros_like(times), times)) == [(0.0, 7200.0)]


def test_short_dip_is_one_interval():
    times = np.arange(0.0, 7200.0, 10.0)
    gap = np.full_like(times, 9.21)
    gap[(times >= 3000.0) & (times < 3200.0)] = 0.5     # 67 s < 0.25 S = 307 s
    (iv,) = detect_bunching(two_bus_trace(gap, times))
    assert iv[1] - iv[0] == pytest.approx(200.0, abs=10.0)
    gap[(times >= 5000.0) & (times < 5100.0)] = 0.5     # too short to count
    assert len(detect_bunching(two_bus_trace(gap, times))) == 1
    assert detect_bunching(two_bus_trace(gap, times), t_min=3600.0) == []


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 9.21), min_size=50, max_size=200))
def test_bunching_intervals_sorted_and_disjoint(gaps):
    times = np.arange(len(gaps)) * 30.0
    ivs = detect_bunching(two_bus_trace(np.array(gaps), times), min_duration_s=60.0)
    for a, b in zip(ivs, ivs[1:]):
        assert a[1] < b[0]
    assert all(t1 - t0 >= 60.0 for t0, t1 in ivs)


def test_bunching_threshold_validation():
    times = np.arange(0.0, 100.0, 10.0)
    with pytest.raises(ValueError):
        detect_bunching(two_bus_trace(np.zeros_like(times), times), threshold_fraction=0)


# ---- files ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def run_trace():
    from busholding.controllers import DualHeadwayHolding, DualHeadwayParams
    sim = make_sim(xi=0.03, seed=1)
    return sim.run(DualHeadwayHolding(DualHeadwayParams.for_route(RouteConfig(), 0.03)), 4 * 3600)


def test_csv_round_trip_is_exact(run_trace, tmp_path):
    run_trace.to_csv(tmp_path)
    back = SimTrace.from_csv(tmp_path, run_trace.config, end_time=run_trace.end_time)
    for k in run_trace.trajectories:
        assert np.array_equal(run_trace.trajectories[k], back.trajectories[k])
    assert np.array_equal(run_trace.passengers, back.passengers, equal_nan=True)
    assert np.array_equal(run_trace.holds, back.holds)
    assert passenger_metrics(back) == passenger_metrics(run_trace)
    assert holding_metrics(back) == holding_metrics(run_trace)
    assert detect_bunching(back) == detect_bunching(run_trace)


def test_csv_errors_name_the_row(run_trace, tmp_path):
    run_trace.to_csv(tmp_path)
    lines = (tmp_path / "passengers.csv").read_text().splitlines()
    lines[3] = "abc,1,2,,"
    (tmp_path / "passengers.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceFormatError, match="row 4"):
        SimTrace.from_csv(tmp_path, run_trace.config)
    (tmp_path / "trajectories.csv").write_text("t,bus\n")
    with pytest.raises(TraceFormatError, match="header"):
        SimTrace.from_csv(tmp_path, run_trace.config)


def test_summary_invariants(run_trace):
    s = summarize(run_trace, 0.03)
    assert s.controller == "dual-headway" and s.seed == 1
    assert s.std_wait_s >= 0 and s.std_travel_s >= 0 and s.std_hold_s >= 0
    assert s.mean_wait_s >= 0 and s.mean_travel_s >= 0 and s.mean_hold_s >= 0
    assert s.pax_served <= len(run_trace.passengers)


def test_export_empty_is_header_only(tmp_path):
    p = export_summary([], tmp_path / "s.csv")
    assert p.read_text().splitlines() == [",".join(SUMMARY_COLUMNS)]


def test_export_orders_rows(tmp_path):
    rows = [MetricsSummary("none", 0.02, 1, 1.0), MetricsSummary("dual-headway", 0.04, 0, 2.0),
            MetricsSummary("dual-headway", 0.02, 3, 3.0), MetricsSummary("dual-headway", 0.02, 0)]
    back = read_summary(export_summary(rows, tmp_path / "s.csv"))
    assert [(r.controller, r.xi, r.seed) for r in back] == [
        ("dual-headway", 0.02, 0), ("dual-headway", 0.02, 3), ("dual-headway", 0.04, 0),
        ("none", 0.02, 1)]
    assert back[0].mean_wait_s is None


def test_export_round_trip(run_trace, tmp_path):
    s = [summarize(run_trace, 0.03), summarize(run_trace, 0.03, seed=5, controller="none")]
    assert read_summary(export_summary(s, tmp_path / "s.csv")) == sorted(
        s, key=lambda r: (r.controller, r.xi, r.seed))


def test_export_reports_path_on_failure(tmp_path):
    (tmp_path / "f").write_text("")
    with pytest.raises(OSError, match="f/s.csv"):
        export_summary([], tmp_path / "f" / "s.csv")


def test_expected_wait_regular_service():
    # departures every 100 s at one stop: mean wait 50 s
    dep = np.array([(100.0 * k, 0, 3) for k in range(20)])
    assert expected_wait(dep, np.ones(17), 17) == pytest.approx(50.0)
    # alternating 50 / 150 s gaps: (50^2 + 150^2) / (2 * 200) = 62.5
    t = np.cumsum([0] + [50, 150] * 10)
    dep = np.array([(x, 0, 3) for x in t])
    assert expected_wait(dep, np.ones(17), 17) == pytest.approx(62.5)
