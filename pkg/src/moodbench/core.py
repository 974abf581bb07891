"""Domain types and raw sensor-log ingestion.

Raw layout is ``<root>/<user_id>/<modality>.csv`` with one header row per
file, timestamps in epoch milliseconds UTC, and empty fields meaning missing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

KNOWN_COUNTRIES = ("CN", "DK", "IN", "IT", "MX", "MN", "PY", "UK")

ACTIVITY_LABELS = (
    "still", "in_vehicle", "on_bicycle", "on_foot",
    "running", "tilting", "walking", "other",
)

APP_CATEGORIES = (
    "action", "adventure", "arcade", "art_design", "auto_vehicles", "beauty",
    "board", "books_reference", "business", "card", "casino", "casual",
    "comics", "communication", "dating", "education", "entertainment",
    "finance", "food_drink", "health_fitness", "house", "lifestyle",
    "maps_navigation", "medical", "music", "news_magazine", "parenting",
    "personalization", "photography", "productivity", "puzzle", "racing",
    "role_playing", "shopping", "simulation", "social", "sports", "strategy",
    "tools", "travel", "trivia", "video_players_editors", "weather", "word",
    "not_found",
)

RADIO_MODALITIES = (
    "wifi", "bluetooth_le", "bluetooth_normal",
    "cellular_gsm", "cellular_wcdma", "cellular_lte",
)

MODALITIES = (
    "location", *RADIO_MODALITIES, "notifications", "proximity", "activity",
    "steps", "screen", "presence", "touch", "apps",
)


class MoodbenchError(Exception):
    pass


class MalformedLine(MoodbenchError, ValueError):
    def __init__(self, file, line_no, reason=""):
        self.file = str(file)
        self.line_no = line_no
        msg = f"{self.file}:{line_no}: malformed line"
        super().__init__(f"{msg} ({reason})" if reason else msg)


class InvalidEnum(MoodbenchError, ValueError):
    pass


class InvalidMood(MoodbenchError, ValueError):
    pass


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class LocationEvent:
    ts: int
    lat: float
    lon: float
    altitude: float
    speed: float | None = None


@dataclass(frozen=True)
class RadioScan:
    ts: int
    device_id: str
    rssi: float
    connected: bool | None = None  # wifi only


@dataclass(frozen=True)
class NotificationEvent:
    ts: int
    notif_id: str
    action: str  # posted | removed


@dataclass(frozen=True)
class ProximityEvent:
    ts: int
    value: float


@dataclass(frozen=True)
class ActivityEvent:
    ts: int
    label: str


@dataclass(frozen=True)
class StepsEvent:
    ts: int
    kind: str  # counter | detected
    count: int


@dataclass(frozen=True)
class ScreenEvent:
    ts: int
    action: str  # on | off


@dataclass(frozen=True)
class PresenceEvent:
    ts: int
    action: str  # present_start | present_end


@dataclass(frozen=True)
class TouchEvent:
    ts: int


@dataclass(frozen=True)
class AppEvent:
    ts: int
    category: str


@dataclass
class SensorBundle:
    user_id: str
    country: str | None = None
    streams: dict[str, list] = field(default_factory=dict)

    def __post_init__(self):
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        for m in MODALITIES:
            self.streams.setdefault(m, [])
        for m, events in self.streams.items():
            # stable: equal timestamps keep input order
            self.streams[m] = sorted(events, key=lambda e: e.ts)

    def stream(self, modality: str) -> list:
        return self.streams[modality]


@dataclass(frozen=True)
class SelfReport:
    report_id: str
    user_id: str
    country: str
    ts: int
    mood_raw: int
    activity_code: int | None = None
    location_code: int | None = None
    social_code: int | None = None

    def __post_init__(self):
        if self.mood_raw not in (1, 2, 3, 4, 5):
            raise InvalidMood(f"mood_raw must be in 1..5, got {self.mood_raw!r}")


def categorize_app(package: str, lookup: dict[str, str]) -> str:
    """Play-Store category for an app package; unknown packages fall into not_found."""
    cat = lookup.get(package)
    return cat if cat in APP_CATEGORIES else "not_found"


# ---------------------------------------------------------------------------
# CSV schemas


def _enum(allowed):
    def parse(s):
        if s not in allowed:
            raise InvalidEnum(f"{s!r} not in {sorted(allowed)}")
        return s
    return parse


def _opt_float(s):
    return None if s == "" else _finite(s)


def _finite(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {s!r}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise ValueError(f"negative count {s!r}")
    return v


def _flag(s):
    if s not in ("0", "1"):
        raise ValueError(f"flag must be 0 or 1, got {s!r}")
    return s == "1"


def _radio(with_connected: bool, value_col: str):
    cols = ["ts_ms", "device_id", value_col] + (["connected"] if with_connected else [])

    def build(r):
        if not r[1]:
            raise ValueError("empty device_id")
        return RadioScan(int(r[0]), r[1], _finite(r[2]),
                         _flag(r[3]) if with_connected else None)

    def dump(e):
        row = [e.ts, e.device_id, _fmt(e.rssi)]
        if with_connected:
            row.append("1" if e.connected else "0")
        return row
    return cols, build, dump


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


@dataclass(frozen=True)
class Schema:
    header: tuple
    build: Callable[[list[str]], object]
    dump: Callable[[object], list]


_wifi = _radio(True, "rssi")
_ble = _radio(False, "rssi")
_cell = _radio(False, "signal")

SCHEMAS: dict[str, Schema] = {
    "location": Schema(
        ("ts_ms", "lat", "lon", "altitude", "speed"),
        lambda r: LocationEvent(int(r[0]), _finite(r[1]), _finite(r[2]),
                                _finite(r[3]), _opt_float(r[4])),
        lambda e: [e.ts, _fmt(e.lat), _fmt(e.lon), _fmt(e.altitude), _fmt(e.speed)],
    ),
    "wifi": Schema(tuple(_wifi[0]), _wifi[1], _wifi[2]),
    "bluetooth_le": Schema(tuple(_ble[0]), _ble[1], _ble[2]),
    "bluetooth_normal": Schema(tuple(_ble[0]), _ble[1], _ble[2]),
    **{m: Schema(tuple(_cell[0]), _cell[1], _cell[2])
       for m in ("cellular_gsm", "cellular_wcdma", "cellular_lte")},
    "notifications": Schema(
        ("ts_ms", "notif_id", "action"),
        lambda r: NotificationEvent(int(r[0]), r[1], _enum({"posted", "removed"})(r[2])),
        lambda e: [e.ts, e.notif_id, e.action],
    ),
    "proximity": Schema(
        ("ts_ms", "value"),
        lambda r: ProximityEvent(int(r[0]), _finite(r[1])),
        lambda e: [e.ts, _fmt(e.value)],
    ),
    "activity": Schema(
        ("ts_ms", "label"),
        lambda r: ActivityEvent(int(r[0]), _enum(set(ACTIVITY_LABELS))(r[1])),
        lambda e: [e.ts, e.label],
    ),
    "steps": Schema(
        ("ts_ms", "kind", "count"),
        lambda r: StepsEvent(int(r[0]), _enum({"counter", "detected"})(r[1]), _nonneg_int(r[2])),
        lambda e: [e.ts, e.kind, e.count],
    ),
    "screen": Schema(
        ("ts_ms", "action"),
        lambda r: ScreenEvent(int(r[0]), _enum({"on", "off"})(r[1])),
        lambda e: [e.ts, e.action],
    ),
    "presence": Schema(
        ("ts_ms", "action"),
        lambda r: PresenceEvent(int(r[0]), _enum({"present_start", "present_end"})(r[1])),
        lambda e: [e.ts, e.action],
    ),
    "touch": Schema(("ts_ms",), lambda r: TouchEvent(int(r[0])), lambda e: [e.ts]),
    "apps": Schema(
        ("ts_ms", "category"),
        lambda r: AppEvent(int(r[0]), _enum(set(APP_CATEGORIES))(r[1])),
        lambda e: [e.ts, e.category],
    ),
}

REPORT_HEADER = ("report_id", "user_id", "country", "ts_ms", "mood_raw",
                 "activity_code", "location_code", "social_code")


def _rows(path: Path, header: tuple) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(h.strip() for h in first) != header:
            raise MalformedLine(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row or (len(row) == 1 and row[0] == ""):
                continue
            if len(row) != len(header):
                raise MalformedLine(path, reader.line_num, f"expected {len(header)} fields")
            yield reader.line_num, row


def load_stream(path: str | Path, modality: str) -> list:
    path = Path(path)
    schema = SCHEMAS[modality]
    events = []
    for line_no, row in _rows(path, schema.header):
        try:
            ev = schema.build(row)
        except InvalidEnum as exc:
            raise InvalidEnum(f"{path}:{line_no}: {exc}") from None
        except (ValueError, IndexError) as exc:
            raise MalformedLine(path, line_no, str(exc)) from None
        if ev.ts < 0:
            raise MalformedLine(path, line_no, "negative timestamp")
        events.append(ev)
    events.sort(key=lambda e: e.ts)
    return events


def load_participant(dir_path: str | Path, country: str | None = None) -> SensorBundle:
    dir_path = Path(dir_path)
    streams = {}
    for m in MODALITIES:
        f = dir_path / f"{m}.csv"
        streams[m] = load_stream(f, m) if f.exists() else []
    return SensorBundle(dir_path.name, country, streams)


def write_participant(bundle: SensorBundle, root: str | Path) -> Path:
    """Write a bundle under ``root/<user_id>/``; empty streams produce no file."""
    out = Path(root) / bundle.user_id
    out.mkdir(parents=True, exist_ok=True)
    for m, events in bundle.streams.items():
        if not events:
            continue
        schema = SCHEMAS[m]
        with open(out / f"{m}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(schema.header)
            for e in events:
                w.writerow(schema.dump(e))
    return out


def _opt_int(s):
    return None if s == "" else int(s)


def load_reports(file_path: str | Path) -> list[SelfReport]:
    path = Path(file_path)
    reports = []
    for line_no, row in _rows(path, REPORT_HEADER):
        try:
            mood = int(row[4])
        except ValueError:
            raise MalformedLine(path, line_no, f"mood_raw {row[4]!r}") from None
        if mood not in (1, 2, 3, 4, 5):
            raise InvalidMood(f"{path}:{line_no}: mood_raw {mood} outside 1..5")
        try:
            if not row[0] or not row[1] or not row[2]:
                raise ValueError("empty id or country")
            ts = int(row[3])
            if ts < 0:
                raise ValueError("negative timestamp")
            rep = SelfReport(row[0], row[1], row[2], ts, mood,
                             _opt_int(row[5]), _opt_int(row[6]), _opt_int(row[7]))
        except ValueError as exc:
            raise MalformedLine(path, line_no, str(exc)) from None
        reports.append(rep)
    return reports


def write_reports(reports: Iterable[SelfReport], file_path: str | Path) -> None:
    def opt(v):
        return "" if v is None else str(v)

    with open(file_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow([r.report_id, r.user_id, r.country, r.ts, r.mood_raw,
                        opt(r.activity_code), opt(r.location_code), opt(r.social_code)])
