import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from moodbench.core import (
    ACTIVITY_LABELS, APP_CATEGORIES, MODALITIES, ActivityEvent, AppEvent, InvalidEnum,
    InvalidMood, LocationEvent, MalformedLine, NotificationEvent, PresenceEvent, ProximityEvent,
    RadioScan, ScreenEvent, SelfReport, SensorBundle, StepsEvent, TouchEvent, categorize_app,
    load_participant, load_reports, load_stream, write_participant, write_reports,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_empty_directory_gives_empty_streams(tmp_path):
    b = load_participant(tmp_path)
    assert set(b.streams) == set(MODALITIES)
    assert all(v == [] for v in b.streams.values())


def test_screen_rows_are_sorted(tmp_path):
    _write(tmp_path / "screen.csv", "ts_ms,action\n100,on\n50,off\n")
    b = load_participant(tmp_path)
    assert b.streams["screen"] == [ScreenEvent(50, "off"), ScreenEvent(100, "on")]


def test_unknown_activity_label(tmp_path):
    _write(tmp_path / "activity.csv", "ts_ms,label\n1,flying\n")
    with pytest.raises(InvalidEnum):
        load_participant(tmp_path)


def test_unknown_app_category(tmp_path):
    _write(tmp_path / "apps.csv", "ts_ms,category\n1,widgets\n")
    with pytest.raises(InvalidEnum):
        load_participant(tmp_path)


@pytest.mark.parametrize("text,line", [
    ("ts_ms,value\n1,abc\n", 2),
    ("ts_ms,value\n1,2\n3\n", 3),
    ("ts_ms,value\n-5,2\n", 2),
    ("ts_ms,value\n1,nan\n", 2),
])
def test_malformed_lines(tmp_path, text, line):
    p = _write(tmp_path / "proximity.csv", text)
    with pytest.raises(MalformedLine) as ei:
        load_stream(p, "proximity")
    assert ei.value.line_no == line


def test_wrong_header(tmp_path):
    p = _write(tmp_path / "touch.csv", "time\n1\n")
    with pytest.raises(MalformedLine):
        load_stream(p, "touch")


def test_negative_step_count(tmp_path):
    p = _write(tmp_path / "steps.csv", "ts_ms,kind,count\n1,counter,-3\n")
    with pytest.raises(MalformedLine):
        load_stream(p, "steps")


def test_reports(tmp_path):
    p = _write(tmp_path / "reports.csv",
               "report_id,user_id,country,ts_ms,mood_raw,activity_code,location_code,social_code\n"
               "a,u,IT,10,5,,1,2\nb,u,IT,5,1,3,,\nc,v,DK,7,3,,,\n")
    reps = load_reports(p)
    assert [r.report_id for r in reps] == ["a", "b", "c"]
    assert reps[0].mood_raw == 5 and reps[0].activity_code is None and reps[0].social_code == 2


def test_report_mood_out_of_range(tmp_path):
    p = _write(tmp_path / "reports.csv",
               "report_id,user_id,country,ts_ms,mood_raw,activity_code,location_code,social_code\n"
               "a,u,IT,10,0,,,\n")
    with pytest.raises(InvalidMood):
        load_reports(p)


def test_categorize_app():
    lookup = {"com.chat": "communication", "com.x": "bogus"}
    assert categorize_app("com.chat", lookup) == "communication"
    assert categorize_app("com.unknown", lookup) == "not_found"
    assert categorize_app("com.x", lookup) == "not_found"


def test_bundle_requires_user():
    with pytest.raises(ValueError):
        SensorBundle("")


def test_report_validates_mood():
    with pytest.raises(InvalidMood):
        SelfReport("r", "u", "IT", 0, 6)


# ---------------------------------------------------------------------------
# round trip

ts = st.integers(0, 10**12)
fin = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
ident = st.text("abcdefXYZ019-_", min_size=1, max_size=6)

events = {
    "location": st.builds(LocationEvent, ts, st.floats(-90, 90), st.floats(-180, 180), fin,
                          st.none() | st.floats(0, 100)),
    "wifi": st.builds(RadioScan, ts, ident, fin, st.booleans()),
    "bluetooth_le": st.builds(RadioScan, ts, ident, fin, st.none()),
    "cellular_lte": st.builds(RadioScan, ts, ident, fin, st.none()),
    "notifications": st.builds(NotificationEvent, ts, ident, st.sampled_from(["posted", "removed"])),
    "proximity": st.builds(ProximityEvent, ts, fin),
    "activity": st.builds(ActivityEvent, ts, st.sampled_from(ACTIVITY_LABELS)),
    "steps": st.builds(StepsEvent, ts, st.sampled_from(["counter", "detected"]), st.integers(0, 10**6)),
    "screen": st.builds(ScreenEvent, ts, st.sampled_from(["on", "off"])),
    "presence": st.builds(PresenceEvent, ts, st.sampled_from(["present_start", "present_end"])),
    "touch": st.builds(TouchEvent, ts),
    "apps": st.builds(AppEvent, ts, st.sampled_from(APP_CATEGORIES)),
}
streams = st.fixed_dictionaries({m: st.lists(s, max_size=8) for m, s in events.items()})


@given(streams)
def test_bundle_round_trip(tmp_path_factory, s):
    root = tmp_path_factory.mktemp("rt")
    b = SensorBundle("u1", None, s)
    write_participant(b, root)
    back = load_participant(root / "u1")
    assert back.streams == b.streams


@given(st.lists(events["screen"], max_size=12), st.randoms())
def test_ingestion_is_order_insensitive(tmp_path_factory, evs, rnd):
    root = tmp_path_factory.mktemp("perm")
    b = SensorBundle("u", None, {"screen": evs})
    write_participant(b, root)
    lines = (root / "u" / "screen.csv").read_text().splitlines() if evs else ["ts_ms,action"]
    body = lines[1:]
    rnd.shuffle(body)
    (root / "u" / "screen.csv").write_text("\n".join([lines[0], *body]) + "\n")
    got = load_participant(root / "u").streams["screen"]
    assert [e.ts for e in got] == sorted(e.ts for e in evs)
    assert sorted(got, key=lambda e: (e.ts, e.action)) == sorted(evs, key=lambda e: (e.ts, e.action))


def test_modality_of_events_matches_file(tmp_path):
    rnd = random.Random(0)
    b = SensorBundle("u", None, {
        "touch": [TouchEvent(rnd.randrange(1000)) for _ in range(5)],
        "proximity": [ProximityEvent(3, 1.5)],
    })
    write_participant(b, tmp_path)
    back = load_participant(tmp_path / "u")
    assert all(isinstance(e, TouchEvent) for e in back.streams["touch"])
    assert all(isinstance(e, ProximityEvent) for e in back.streams["proximity"])


def test_reports_round_trip(tmp_path):
    reps = [SelfReport("a", "u", "IT", 10, 4, 1, None, 3), SelfReport("b", "u", "XX", 0, 1)]
    write_reports(reps, tmp_path / "r.csv")
    assert load_reports(tmp_path / "r.csv") == reps
