"""Window matching and per-window sensing features.

Every self-report at time T is matched to the half-open window
[T - w/2, T + w/2). Missing values are NaN; counts, durations and
indicators are 0 when their modality is silent in the window.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    ACTIVITY_LABELS, APP_CATEGORIES, RADIO_MODALITIES,
    SelfReport, SensorBundle,
)

REGISTRY_VERSION = "1"
DEFAULT_WIDTH_S = 600
WINDOW_CHOICES_S = (120, 240, 600, 900, 1200)
CARRY_IN_LOOKBACK_MS = 30 * 60 * 1000
EARTH_RADIUS_M = 6_371_000.0

NAN = math.nan


@dataclass(frozen=True)
class Window:
    start: int
    end: int
    report_t: int

    def contains(self, ts: int) -> bool:
        return self.start <= ts < self.end

    @property
    def width_ms(self) -> int:
        return self.end - self.start


def window_for(t: int, width_s: int = DEFAULT_WIDTH_S) -> Window:
    if width_s <= 0:
        raise ValueError(f"window width must be positive, got {width_s}")
    half = int(round(width_s * 500))
    return Window(t - half, t + half, t)


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    modality: str
    kind: str  # count | duration_s | statistic | indicator | distance_m | speed_ms | altitude_m


def _build_registry() -> tuple[FeatureSpec, ...]:
    specs = [
        FeatureSpec("location_radius_of_gyration", "location", "distance_m"),
        FeatureSpec("location_distance_traveled", "location", "distance_m"),
        FeatureSpec("location_altitude_mean", "location", "altitude_m"),
        FeatureSpec("location_altitude_min", "location", "altitude_m"),
        FeatureSpec("location_altitude_max", "location", "altitude_m"),
        FeatureSpec("location_speed_mean", "location", "speed_ms"),
        FeatureSpec("location_speed_min", "location", "speed_ms"),
        FeatureSpec("location_speed_max", "location", "speed_ms"),
        FeatureSpec("location_speed_std", "location", "speed_ms"),
    ]
    for radio in RADIO_MODALITIES:
        if radio == "wifi":
            specs.append(FeatureSpec("wifi_connected", radio, "indicator"))
        specs.append(FeatureSpec(f"{radio}_num_devices", radio, "count"))
        value = "signal" if radio.startswith("cellular") else "rssi"
        for stat in ("mean", "std", "min", "max"):
            specs.append(FeatureSpec(f"{radio}_{value}_{stat}", radio, "statistic"))
    for name in ("posted", "posted_nodup", "removed", "removed_nodup"):
        specs.append(FeatureSpec(f"notifications_{name}", "notifications", "count"))
    for stat in ("mean", "std", "min", "max"):
        specs.append(FeatureSpec(f"proximity_{stat}", "proximity", "statistic"))
    for label in ACTIVITY_LABELS:
        specs.append(FeatureSpec(f"activity_{label}", "activity", "duration_s"))
    specs.append(FeatureSpec("steps_counter", "steps", "count"))
    specs.append(FeatureSpec("steps_detected", "steps", "count"))
    specs.append(FeatureSpec("screen_num_episodes", "screen", "count"))
    for stat in ("mean", "min", "max", "std"):
        specs.append(FeatureSpec(f"screen_episode_{stat}", "screen", "duration_s"))
    specs.append(FeatureSpec("screen_total_on", "screen", "duration_s"))
    specs.append(FeatureSpec("presence_time", "presence", "duration_s"))
    specs.append(FeatureSpec("touch_count", "touch", "count"))
    for cat in APP_CATEGORIES:
        specs.append(FeatureSpec(f"app_{cat}", "apps", "duration_s"))
    return tuple(specs)


REGISTRY = _build_registry()
FEATURE_NAMES = tuple(s.name for s in REGISTRY)
FEATURE_INDEX = {n: i for i, n in enumerate(FEATURE_NAMES)}
assert len(FEATURE_INDEX) == len(REGISTRY)


def registry_json() -> dict:
    return {
        "version": REGISTRY_VERSION,
        "n_features": len(REGISTRY),
        "features": [{"name": s.name, "modality": s.modality, "kind": s.kind}
                     for s in REGISTRY],
    }


# ---------------------------------------------------------------------------
# per-modality features


def haversine_m(lat1, lon1, lat2, lon2) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def _stats(values: Sequence[float]) -> tuple[float, float, float, float]:
    """(mean, sample std, min, max); NaN where undefined."""
    n = len(values)
    if n == 0:
        return NAN, NAN, NAN, NAN
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if n >= 2 else NAN
    return float(arr.mean()), std, float(arr.min()), float(arr.max())


def feat_location(points) -> dict[str, float]:
    n = len(points)
    out = dict.fromkeys(FEATURE_NAMES[:9], NAN)
    if n == 0:
        return out
    dist = sum(haversine_m(a.lat, a.lon, b.lat, b.lon) for a, b in zip(points, points[1:]))
    # equirectangular projection around the mean position
    lat0 = math.radians(sum(p.lat for p in points) / n)
    lon0 = sum(p.lon for p in points) / n
    xs = [EARTH_RADIUS_M * math.radians(p.lon - lon0) * math.cos(lat0) for p in points]
    ys = [EARTH_RADIUS_M * math.radians(p.lat) - EARTH_RADIUS_M * lat0 for p in points]
    cx, cy = sum(xs) / n, sum(ys) / n
    rog = math.sqrt(sum((x - cx) ** 2 + (y - cy) ** 2 for x, y in zip(xs, ys)) / n)

    speeds = []
    for i, p in enumerate(points):
        if p.speed is not None:
            speeds.append(p.speed)
        elif i > 0 and p.ts > points[i - 1].ts:
            q = points[i - 1]
            speeds.append(haversine_m(q.lat, q.lon, p.lat, p.lon) / ((p.ts - q.ts) / 1000.0))
    alt_mean, _, alt_min, alt_max = _stats([p.altitude for p in points])
    sp_mean, sp_std, sp_min, sp_max = _stats(speeds)
    out.update(
        location_radius_of_gyration=rog,
        location_distance_traveled=dist,
        location_altitude_mean=alt_mean,
        location_altitude_min=alt_min,
        location_altitude_max=alt_max,
        location_speed_mean=sp_mean,
        location_speed_min=sp_min,
        location_speed_max=sp_max,
        location_speed_std=sp_std,
    )
    return out


def feat_radio(scans, radio: str) -> dict[str, float]:
    value = "signal" if radio.startswith("cellular") else "rssi"
    mean, std, lo, hi = _stats([s.rssi for s in scans])
    out = {
        f"{radio}_num_devices": float(len({s.device_id for s in scans})),
        f"{radio}_{value}_mean": mean,
        f"{radio}_{value}_std": std,
        f"{radio}_{value}_min": lo,
        f"{radio}_{value}_max": hi,
    }
    if radio == "wifi":
        out["wifi_connected"] = 1.0 if any(s.connected for s in scans) else 0.0
    return out


def feat_notifications(events) -> dict[str, float]:
    posted = [e.notif_id for e in events if e.action == "posted"]
    removed = [e.notif_id for e in events if e.action == "removed"]
    return {
        "notifications_posted": float(len(posted)),
        "notifications_posted_nodup": float(len(set(posted))),
        "notifications_removed": float(len(removed)),
        "notifications_removed_nodup": float(len(set(removed))),
    }


def feat_scalar_stats(events, prefix: str = "proximity") -> dict[str, float]:
    mean, std, lo, hi = _stats([e.value for e in events])
    return {f"{prefix}_mean": mean, f"{prefix}_std": std,
            f"{prefix}_min": lo, f"{prefix}_max": hi}


def feat_interval_time(samples, carry_in, kinds: Iterable[str], window: Window,
                       stops: Sequence[int] = ()) -> dict[str, float]:
    """Seconds spent per label, holding each sample's label until the next one.

    ``samples`` are (ts, label) pairs inside the window, ``carry_in`` is the
    last pair before it (or None) and covers the window start. A label is
    also closed by the first ``stops`` timestamp at or after its sample time.
    """
    durations = {k: 0.0 for k in kinds}
    segs = ([carry_in] if carry_in is not None else []) + list(samples)
    stops = sorted(stops)
    for i, (t0, label) in enumerate(segs):
        end = segs[i + 1][0] if i + 1 < len(segs) else window.end
        j = bisect.bisect_left(stops, t0)
        if j < len(stops):
            end = min(end, stops[j])
        end = min(end, window.end)
        begin = max(t0, window.start)
        if end > begin:
            durations[label] = durations.get(label, 0.0) + (end - begin) / 1000.0
    return durations


def feat_steps(events) -> dict[str, float]:
    counters = [e.count for e in events if e.kind == "counter"]
    detected = sum(1 for e in events if e.kind == "detected")
    if len(counters) >= 2:
        counter = float(sum(max(0, b - a) for a, b in zip(counters, counters[1:])))
    else:
        counter = NAN
    return {"steps_counter": counter, "steps_detected": float(detected)}


def _episodes(events, carry_in_on: bool, window: Window, on: str, off: str) -> list[float]:
    """Clipped on-interval durations (seconds); duplicate states collapse, first wins."""
    durations = []
    on_since = window.start if carry_in_on else None
    for e in events:
        if e.action == on and on_since is None:
            on_since = e.ts
        elif e.action == off and on_since is not None:
            durations.append((e.ts - on_since) / 1000.0)
            on_since = None
    if on_since is not None:
        durations.append((window.end - on_since) / 1000.0)
    return [d for d in durations if d > 0]


def feat_screen(events, carry_in_on: bool, window: Window) -> dict[str, float]:
    eps = _episodes(events, carry_in_on, window, "on", "off")
    mean, std, lo, hi = _stats(eps)
    return {
        "screen_num_episodes": float(len(eps)),
        "screen_episode_mean": mean,
        "screen_episode_min": lo,
        "screen_episode_max": hi,
        "screen_episode_std": std,
        "screen_total_on": float(sum(eps)),
    }


def feat_presence(events, carry_in_present: bool, window: Window) -> dict[str, float]:
    eps = _episodes(events, carry_in_present, window, "present_start", "present_end")
    return {"presence_time": float(sum(eps))}


def feat_touch(events) -> dict[str, float]:
    return {"touch_count": float(len(events))}


# ---------------------------------------------------------------------------
# row assembly


@dataclass
class FeatureRow:
    report_id: str
    user_id: str
    country: str
    ts: int
    values: np.ndarray  # aligned to REGISTRY, NaN = missing
    mood_raw: int

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


class _Slicer:
    """Timestamp index over a bundle's streams for repeated window queries."""

    def __init__(self, bundle: SensorBundle):
        self.bundle = bundle
        self.ts = {m: [e.ts for e in ev] for m, ev in bundle.streams.items()}

    def inside(self, modality: str, w: Window) -> list:
        ts = self.ts[modality]
        lo = bisect.bisect_left(ts, w.start)
        hi = bisect.bisect_left(ts, w.end)
        return self.bundle.streams[modality][lo:hi]

    def last_before(self, modality: str, w: Window):
        ts = self.ts[modality]
        i = bisect.bisect_left(ts, w.start) - 1
        if i >= 0 and ts[i] >= w.start - CARRY_IN_LOOKBACK_MS:
            return self.bundle.streams[modality][i]
        return None

    def between(self, modality: str, lo_t: int, hi_t: int) -> list:
        ts = self.ts[modality]
        return self.bundle.streams[modality][bisect.bisect_left(ts, lo_t):bisect.bisect_left(ts, hi_t)]


def _row_values(sl: _Slicer, w: Window) -> np.ndarray:
    feats: dict[str, float] = {}
    feats.update(feat_location(sl.inside("location", w)))
    for radio in RADIO_MODALITIES:
        feats.update(feat_radio(sl.inside(radio, w), radio))
    feats.update(feat_notifications(sl.inside("notifications", w)))
    feats.update(feat_scalar_stats(sl.inside("proximity", w)))

    act = sl.inside("activity", w)
    prev = sl.last_before("activity", w)
    dur = feat_interval_time([(e.ts, e.label) for e in act],
                             (prev.ts, prev.label) if prev else None, ACTIVITY_LABELS, w)
    feats.update({f"activity_{k}": v for k, v in dur.items()})

    feats.update(feat_steps(sl.inside("steps", w)))

    prev = sl.last_before("screen", w)
    feats.update(feat_screen(sl.inside("screen", w), bool(prev and prev.action == "on"), w))
    prev = sl.last_before("presence", w)
    feats.update(feat_presence(sl.inside("presence", w),
                               bool(prev and prev.action == "present_start"), w))
    feats.update(feat_touch(sl.inside("touch", w)))

    apps = sl.inside("apps", w)
    prev = sl.last_before("apps", w)
    lo_t = prev.ts if prev else w.start
    stops = [e.ts for e in sl.between("screen", lo_t, w.end) if e.action == "off"]
    dur = feat_interval_time([(e.ts, e.category) for e in apps],
                             (prev.ts, prev.category) if prev else None,
                             APP_CATEGORIES, w, stops)
    feats.update({f"app_{k}": v for k, v in dur.items()})

    return np.array([feats[n] for n in FEATURE_NAMES], dtype=float)


def extract_row(bundle: SensorBundle, report: SelfReport,
                width_s: int = DEFAULT_WIDTH_S) -> FeatureRow:
    return extract_rows(bundle, [report], width_s)[0]


def extract_rows(bundle: SensorBundle, reports: Sequence[SelfReport],
                 width_s: int = DEFAULT_WIDTH_S) -> list[FeatureRow]:
    sl = _Slicer(bundle)
    rows = []
    for r in reports:
        if r.user_id != bundle.user_id:
            raise ValueError(f"report {r.report_id} belongs to {r.user_id}, not {bundle.user_id}")
        vals = _row_values(sl, window_for(r.ts, width_s))
        rows.append(FeatureRow(r.report_id, r.user_id, r.country, r.ts, vals, r.mood_raw))
    return rows


def window_overlap_report(reports: Iterable[SelfReport], width_s: int = DEFAULT_WIDTH_S) -> dict[str, int]:
    """Per user, how many consecutive report windows overlap."""
    by_user = defaultdict(list)
    for r in reports:
        by_user[r.user_id].append(r.ts)
    width_ms = width_s * 1000
    out = {}
    for user, ts in sorted(by_user.items()):
        ts.sort()
        out[user] = sum(1 for a, b in zip(ts, ts[1:]) if b - a < width_ms)
    return out


# ---------------------------------------------------------------------------
# output


def fmt_value(v: float) -> str:
    return "" if math.isnan(v) else format(v, ".9g")


def write_features_csv(rows: Iterable[FeatureRow], path: str | Path,
                       names: Sequence[str] = FEATURE_NAMES) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["report_id", "user_id", "country", "ts_ms", "mood_raw", *names])
        for r in rows:
            w.writerow([r.report_id, r.user_id, r.country, r.ts, r.mood_raw,
                        *(fmt_value(v) for v in r.values)])


def write_registry(path: str | Path) -> None:
    Path(path).write_text(json.dumps(registry_json(), indent=2) + "\n", encoding="utf-8")
