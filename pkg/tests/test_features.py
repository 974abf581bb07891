import math

import numpy as np
import pytest
from golden_expected import EXPECTED, GOLDEN_DIR
from hypothesis import given
from hypothesis import strategies as st

from moodbench.core import (
    ActivityEvent, LocationEvent, NotificationEvent, ProximityEvent, RadioScan, ScreenEvent,
    PresenceEvent, SelfReport, SensorBundle, StepsEvent, TouchEvent, load_participant, load_reports,
)
from moodbench.features import (
    ACTIVITY_LABELS, FEATURE_NAMES, REGISTRY, Window, extract_row, extract_rows, feat_interval_time,
    feat_location, feat_notifications, feat_presence, feat_radio, feat_scalar_stats, feat_screen,
    feat_steps, feat_touch, registry_json, window_for, window_overlap_report,
)

W = Window(0, 600_000, 300_000)


def same(a, b, tol=1e-9):
    return (math.isnan(a) and math.isnan(b)) or abs(a - b) <= tol


def test_window_arithmetic():
    w = window_for(1_000_000, 600)
    assert (w.start, w.end, w.report_t) == (700_000, 1_300_000, 1_000_000)
    w0 = window_for(0, 600)
    assert (w0.start, w0.end) == (-300_000, 300_000)
    for width in (120, 240, 600, 900, 1200):
        w = window_for(123_456, width)
        assert w.end - w.start == width * 1000


def test_registry_shape():
    names = [s.name for s in REGISTRY]
    assert len(names) == len(set(names)) == 111
    assert registry_json()["n_features"] == 111


# location

def test_location_single_point():
    f = feat_location([LocationEvent(0, 10.0, 20.0, 55.0)])
    assert f["location_radius_of_gyration"] == 0.0
    assert f["location_distance_traveled"] == 0.0
    assert f["location_altitude_mean"] == 55.0
    assert math.isnan(f["location_speed_mean"])


def test_location_equator_100m():
    dlon = math.degrees(100 / 6_371_000)
    f = feat_location([LocationEvent(0, 0.0, 0.0, 5.0), LocationEvent(50_000, 0.0, dlon, 5.0)])
    assert abs(f["location_distance_traveled"] - 100) <= 0.1
    assert abs(f["location_radius_of_gyration"] - 50) <= 0.05
    assert abs(f["location_speed_mean"] - 2.0) < 1e-9


def test_location_empty():
    assert all(math.isnan(v) for v in feat_location([]).values())


# radio

def test_radio_examples():
    f = feat_radio([RadioScan(0, "A", -40.0), RadioScan(1, "B", -60.0)], "bluetooth_le")
    assert f["bluetooth_le_num_devices"] == 2 and f["bluetooth_le_rssi_mean"] == -50
    assert f["bluetooth_le_rssi_min"] == -60 and f["bluetooth_le_rssi_max"] == -40
    f = feat_radio([RadioScan(0, "A", -40.0), RadioScan(1, "A", -50.0)], "bluetooth_le")
    assert f["bluetooth_le_num_devices"] == 1 and f["bluetooth_le_rssi_mean"] == -45
    f = feat_radio([], "wifi")
    assert f["wifi_num_devices"] == 0 and f["wifi_connected"] == 0
    assert math.isnan(f["wifi_rssi_mean"])
    f = feat_radio([RadioScan(0, "t", -90.0)], "cellular_gsm")
    assert f["cellular_gsm_signal_mean"] == -90


@given(st.lists(st.floats(-120, 0), min_size=1, max_size=30))
def test_radio_min_mean_max(vals):
    f = feat_radio([RadioScan(i, f"d{i % 3}", v) for i, v in enumerate(vals)], "wifi")
    assert f["wifi_rssi_min"] <= f["wifi_rssi_mean"] + 1e-9
    assert f["wifi_rssi_mean"] <= f["wifi_rssi_max"] + 1e-9


# notifications

def test_notifications():
    ev = [NotificationEvent(0, "x", "posted"), NotificationEvent(1, "x", "posted"),
          NotificationEvent(2, "y", "posted")]
    f = feat_notifications(ev)
    assert f["notifications_posted"] == 3 and f["notifications_posted_nodup"] == 2
    assert set(feat_notifications([]).values()) == {0.0}
    f = feat_notifications([NotificationEvent(0, "x", "posted"), NotificationEvent(1, "x", "removed")])
    assert f == {"notifications_posted": 1, "notifications_posted_nodup": 1,
                 "notifications_removed": 1, "notifications_removed_nodup": 1}


# intervals

def test_interval_carry_in_example():
    f = feat_interval_time([(60_000, "A"), (120_000, "B")], (-60_000, "C"), ["A", "B", "C"], W)
    assert f == {"A": 60.0, "B": 480.0, "C": 60.0}


def test_interval_empty_and_full():
    assert set(feat_interval_time([], None, ["A", "B"], W).values()) == {0.0}
    assert feat_interval_time([(0, "A")], None, ["A"], W)["A"] == 600.0


def test_interval_stops_close_labels():
    f = feat_interval_time([(100_000, "A")], None, ["A"], W, stops=[50_000, 250_000])
    assert f["A"] == 150.0


@given(st.lists(st.tuples(st.integers(0, 599_999), st.sampled_from("ABC")), max_size=10),
       st.none() | st.sampled_from("ABC"),
       st.lists(st.integers(-100_000, 700_000), max_size=4))
def test_interval_sums_bounded(samples, carry, stops):
    samples = sorted(samples, key=lambda s: s[0])
    f = feat_interval_time(samples, (-1, carry) if carry else None, "ABC", W, stops)
    assert all(v >= 0 for v in f.values())
    total = sum(f.values())
    assert total <= 600 + 1e-9
    starts_at_zero = carry is not None or (samples and samples[0][0] == 0)
    if starts_at_zero and not stops:
        assert total == pytest.approx(600)


# steps

@pytest.mark.parametrize("counts,expected", [([100, 150, 160], 60), ([100, 5, 25], 20)])
def test_steps_counter(counts, expected):
    ev = [StepsEvent(i, "counter", c) for i, c in enumerate(counts)]
    assert feat_steps(ev)["steps_counter"] == expected


def test_steps_detected_and_missing_counter():
    f = feat_steps([StepsEvent(i, "detected", 1) for i in range(7)] + [StepsEvent(9, "counter", 3)])
    assert f["steps_detected"] == 7 and math.isnan(f["steps_counter"])


# screen / presence / touch

def test_screen_single_episode():
    f = feat_screen([ScreenEvent(180_000, "on"), ScreenEvent(540_000, "off")], False, W)
    assert f["screen_num_episodes"] == 1 and f["screen_total_on"] == 360
    assert math.isnan(f["screen_episode_std"])


def test_screen_carry_in_and_empty():
    f = feat_screen([ScreenEvent(120_000, "off")], True, W)
    assert f["screen_episode_max"] == 120 and f["screen_num_episodes"] == 1
    f = feat_screen([], False, W)
    assert f["screen_num_episodes"] == 0 and f["screen_total_on"] == 0


def test_screen_duplicates_collapse():
    ev = [ScreenEvent(0, "on"), ScreenEvent(100_000, "on"), ScreenEvent(200_000, "off"),
          ScreenEvent(250_000, "off")]
    f = feat_screen(ev, False, W)
    assert f["screen_num_episodes"] == 1 and f["screen_total_on"] == 200


@given(st.lists(st.tuples(st.integers(0, 599_999), st.sampled_from(["on", "off"])), max_size=12),
       st.booleans())
def test_screen_total_bounded(raw, carry):
    ev = [ScreenEvent(t, a) for t, a in sorted(raw)]
    f = feat_screen(ev, carry, W)
    assert 0 <= f["screen_total_on"] <= 600
    if f["screen_num_episodes"] == 0:
        assert f["screen_total_on"] == 0


def test_presence():
    ev = [PresenceEvent(0, "present_start"), PresenceEvent(300_000, "present_end")]
    assert feat_presence(ev, False, W)["presence_time"] == 300
    assert feat_presence([], True, W)["presence_time"] == 600
    assert feat_presence([], False, W)["presence_time"] == 0


def test_scalar_stats():
    f = feat_scalar_stats([ProximityEvent(i, 1.0) for i in range(3)])
    assert (f["proximity_mean"], f["proximity_std"], f["proximity_min"], f["proximity_max"]) == (1, 0, 1, 1)
    f = feat_scalar_stats([ProximityEvent(0, 0.0), ProximityEvent(1, 10.0)])
    assert abs(f["proximity_std"] - 7.0711) < 1e-4 and f["proximity_mean"] == 5
    assert all(math.isnan(v) for v in feat_scalar_stats([]).values())


def test_touch_end_exclusive():
    assert feat_touch([])["touch_count"] == 0
    b = SensorBundle("u", None, {"touch": [TouchEvent(t) for t in (700_000, 1_299_999, 1_300_000)]})
    row = extract_row(b, SelfReport("r", "u", "IT", 1_000_000, 3))
    assert row.as_dict()["touch_count"] == 2


# rows

def test_golden_fixture_rows():
    b = load_participant(GOLDEN_DIR / "raw" / "g1")
    rows = extract_rows(b, load_reports(GOLDEN_DIR / "reports.csv"))
    for row in rows:
        exp = EXPECTED[row.report_id]
        bad = [n for n, v in zip(FEATURE_NAMES, row.values) if not same(v, exp[n])]
        assert not bad, (row.report_id, bad)


def test_empty_bundle_row():
    row = extract_row(SensorBundle("u"), SelfReport("r", "u", "IT", 5_000_000, 3))
    d = row.as_dict()
    assert d["touch_count"] == 0 and d["wifi_num_devices"] == 0 and d["app_social"] == 0
    assert math.isnan(d["location_altitude_mean"]) and math.isnan(d["screen_episode_mean"])


def test_report_user_mismatch():
    with pytest.raises(ValueError):
        extract_row(SensorBundle("u"), SelfReport("r", "v", "IT", 0, 3))


def test_overlap_report():
    mk = lambda rid, t, u="u": SelfReport(rid, u, "IT", t, 3)  # noqa: E731
    assert window_overlap_report([mk("a", 0), mk("b", 300_000)], 600) == {"u": 1}
    assert window_overlap_report([mk("a", 0), mk("b", 1_200_000)], 600) == {"u": 0}
    assert window_overlap_report([mk("a", 0)], 600) == {"u": 0}


def _shifted(bundle, dt):
    from dataclasses import replace
    return SensorBundle(bundle.user_id, bundle.country,
                        {m: [replace(e, ts=e.ts + dt) for e in ev] for m, ev in bundle.streams.items()})


@given(st.integers(-10**8, 10**9))
def test_time_translation_invariance(dt):
    b = load_participant(GOLDEN_DIR / "raw" / "g1")
    reps = load_reports(GOLDEN_DIR / "reports.csv")
    base = extract_rows(b, reps)
    moved = extract_rows(_shifted(b, dt), [SelfReport(r.report_id, r.user_id, r.country, r.ts + dt,
                                                      r.mood_raw) for r in reps])
    for r0, r1 in zip(base, moved):
        assert all(same(a, c, 1e-6) for a, c in zip(r0.values, r1.values))


@given(st.lists(st.integers(1_020_000_000, 1_100_000_000), max_size=20))
def test_events_outside_windows_change_nothing(extra):
    b = load_participant(GOLDEN_DIR / "raw" / "g1")
    reps = load_reports(GOLDEN_DIR / "reports.csv")[:2]
    base = extract_rows(b, reps)
    streams = {m: list(ev) for m, ev in b.streams.items()}
    streams["touch"] += [TouchEvent(t) for t in extra]
    streams["activity"] += [ActivityEvent(t, "running") for t in extra]
    streams["screen"] += [ScreenEvent(t, "on") for t in extra]
    got = extract_rows(SensorBundle("g1", None, streams), reps)
    for r0, r1 in zip(base, got):
        assert all(same(a, c, 0) for a, c in zip(r0.values, r1.values))


def test_disjoint_reports_independent():
    b = load_participant(GOLDEN_DIR / "raw" / "g1")
    reps = load_reports(GOLDEN_DIR / "reports.csv")
    together = extract_rows(b, reps)
    for r, row in zip(reps, together):
        alone = extract_row(b, r)
        assert np.array_equal(np.nan_to_num(alone.values, nan=-1e300),
                              np.nan_to_num(row.values, nan=-1e300))


def test_activity_labels_cover_registry():
    assert {f"activity_{a}" for a in ACTIVITY_LABELS} <= set(FEATURE_NAMES)
