"""Synthetic multi-country sensing data with controllable distribution shift.

Feature j of a report with class c, from user u in country g:

    x = separation * c * [j informative] + country_offset[g, j]
        + user_offset[u, j] + noise

Offsets and noise are Gaussian with the configured scales. ``generate``
emits the feature table directly; ``generate_raw_logs`` turns latent values
into raw event streams whose extracted features are known in advance.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ActivityEvent, AppEvent, KNOWN_COUNTRIES, LocationEvent, MoodbenchError,
    NotificationEvent, PresenceEvent, ProximityEvent, RadioScan, ScreenEvent,
    SelfReport, SensorBundle, StepsEvent, TouchEvent, write_participant, write_reports,
)
from .dataset import Dataset, Task
from .features import FEATURE_NAMES, window_for

BASE_EPOCH_MS = 1_601_251_200_000  # 2020-09-28T00:00:00Z
SPAN_MS = 28 * 24 * 3600 * 1000
RAW_REPORT_SPACING_MS = 2 * 3600 * 1000

DEFAULT_UTC_OFFSETS = {"CN": 8, "DK": 2, "IN": 5.5, "IT": 2, "MX": -5, "MN": 8, "PY": -3, "UK": 1}

HOME_LOCATION_CODE = 1
ALONE_SOCIAL_CODE = 1


class InvalidConfig(MoodbenchError, ValueError):
    pass


@dataclass
class CountryConfig:
    code: str
    n_users: int = 20
    reports_per_user: int = 50
    class_priors: tuple[float, ...] = (0.15, 0.85)
    utc_offset_h: float | None = None

    def __post_init__(self):
        self.class_priors = tuple(float(p) for p in self.class_priors)
        if self.utc_offset_h is None:
            self.utc_offset_h = float(DEFAULT_UTC_OFFSETS.get(self.code, 0))


@dataclass
class SynthConfig:
    countries: list[CountryConfig] = field(
        default_factory=lambda: [CountryConfig(c) for c in KNOWN_COUNTRIES])
    n_features: int = 16
    sigma_country: float = 2.0
    sigma_user: float = 1.5
    sigma_noise: float = 1.0
    class_separation: float = 1.0
    informative_frac: float = 0.3
    missing_rate: float = 0.0
    # Dirichlet concentration for per-user class priors; 0 disables the jitter
    user_prior_concentration: float = 50.0
    seed: int = 0

    def __post_init__(self):
        self.countries = [c if isinstance(c, CountryConfig) else CountryConfig(**c)
                          for c in self.countries]

    @property
    def task(self) -> Task:
        return Task.TWO if len(self.countries[0].class_priors) == 2 else Task.THREE

    def validate(self) -> None:
        if not self.countries:
            raise InvalidConfig("at least one country is required")
        codes = [c.code for c in self.countries]
        if len(set(codes)) != len(codes) or not all(codes):
            raise InvalidConfig("country codes must be unique and non-empty")
        k = len(self.countries[0].class_priors)
        for c in self.countries:
            if c.n_users < 1:
                raise InvalidConfig(f"{c.code}: n_users must be >= 1")
            if c.reports_per_user < 4:
                raise InvalidConfig(f"{c.code}: reports_per_user must be >= 4")
            if len(c.class_priors) != k or k not in (2, 3):
                raise InvalidConfig("class_priors must all have 2 or 3 entries")
            if min(c.class_priors) < 0 or abs(sum(c.class_priors) - 1) > 1e-9:
                raise InvalidConfig(f"{c.code}: class_priors must be a probability vector")
        if self.n_features < 1:
            raise InvalidConfig("n_features must be >= 1")
        if self.sigma_country < 0 or self.sigma_user < 0 or self.class_separation < 0:
            raise InvalidConfig("sigmas and class_separation must be >= 0")
        if not self.sigma_noise > 0:
            raise InvalidConfig("sigma_noise must be > 0")
        if not 0 < self.informative_frac <= 1:
            raise InvalidConfig("informative_frac must be in (0, 1]")
        if not 0 <= self.missing_rate < 1:
            raise InvalidConfig("missing_rate must be in [0, 1)")
        if self.user_prior_concentration < 0:
            raise InvalidConfig("user_prior_concentration must be >= 0")

    def to_json(self) -> dict:
        d = asdict(self)
        for c in d["countries"]:
            c["class_priors"] = list(c["class_priors"])
        return d

    @classmethod
    def from_json(cls, d: dict) -> SynthConfig:
        d = dict(d)
        try:
            shared = {k: d.pop(k) for k in ("n_users", "reports_per_user", "class_priors")
                      if k in d}
            countries = []
            for c in d.pop("countries", list(KNOWN_COUNTRIES)):
                c = {"code": c} if isinstance(c, str) else dict(c)
                countries.append(CountryConfig(**{**shared, **c}))
            cfg = cls(countries=countries, **d)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None
        cfg.validate()
        return cfg

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass
class SynthDataset:
    dataset: Dataset
    labels: np.ndarray          # class index under config.task
    ground_truth: dict
    latent: np.ndarray          # features before missingness


def _mood_for_class(c: int, task: Task, rng) -> int:
    if task is Task.TWO:
        return int(rng.choice((1, 2))) if c == 0 else int(rng.choice((3, 4, 5)))
    return (int(rng.choice((1, 2))), 3, int(rng.choice((4, 5))))[c]


def generate(config: SynthConfig) -> SynthDataset:
    config.validate()
    task = config.task
    F = config.n_features
    root = np.random.SeedSequence(config.seed)
    global_ss, *country_ss = root.spawn(1 + len(config.countries))
    grng = np.random.default_rng(global_ss)
    n_inf = max(1, int(round(config.informative_frac * F)))
    informative = np.sort(grng.choice(F, size=n_inf, replace=False))
    class_means = np.zeros((len(task.classes), F))
    for c in range(len(task.classes)):
        class_means[c, informative] = config.class_separation * c

    X, ys, moods, rids, uids, ctys, tss = [], [], [], [], [], [], []
    country_offsets = {}
    for cc, css in zip(config.countries, country_ss):
        offset_ss, *user_ss = css.spawn(1 + cc.n_users)
        delta = np.random.default_rng(offset_ss).normal(0.0, config.sigma_country, F)
        country_offsets[cc.code] = delta.tolist()
        priors = np.asarray(cc.class_priors)
        for ui, uss in enumerate(user_ss):
            rng = np.random.default_rng(uss)
            eps = rng.normal(0.0, config.sigma_user, F)
            if config.user_prior_concentration > 0:
                p = rng.dirichlet(config.user_prior_concentration * priors + 1e-9)
            else:
                p = priors
            n = cc.reports_per_user
            y = rng.choice(len(priors), size=n, p=p)
            x = class_means[y] + delta + eps + rng.normal(0.0, config.sigma_noise, (n, F))
            local = rng.integers(0, SPAN_MS, size=n)
            ts = np.sort(BASE_EPOCH_MS + local - int(round(cc.utc_offset_h * 3600 * 1000)))
            uid = f"{cc.code}-u{ui:03d}"
            for i in range(n):
                moods.append(_mood_for_class(int(y[i]), task, rng))
                rids.append(f"{uid}-r{i:04d}")
                uids.append(uid)
                ctys.append(cc.code)
            X.append(x)
            ys.append(y)
            tss.append(ts)
    latent = np.vstack(X)
    labels = np.concatenate(ys).astype(np.int64)
    observed = latent.copy()
    if config.missing_rate > 0:
        mask = np.random.default_rng(root.spawn(1)[0]).random(latent.shape) < config.missing_rate
        observed[mask] = np.nan
    names = tuple(f"f{j:03d}" for j in range(F))
    ds = Dataset(observed, names, np.array(rids, dtype=object), np.array(uids, dtype=object),
                 np.array(ctys, dtype=object), np.concatenate(tss).astype(np.int64),
                 np.array(moods, dtype=np.int64), {"synthetic": True})
    truth = {"task": task.value, "informative": informative.tolist(),
             "class_means": class_means.tolist(), "country_offsets": country_offsets,
             "config_digest": config.digest()}
    return SynthDataset(ds, labels, truth, latent)


# ---------------------------------------------------------------------------
# raw logs


def _q(z: float, center: float, scale: float, lo: int, hi: int) -> int:
    return int(min(hi, max(lo, round(center + scale * z))))


def _symmetric(center: int, k: int) -> list[int]:
    """k integers with mean exactly ``center``."""
    return [center + 2 * i - (k - 1) for i in range(k)]


def _sym_std(k: int) -> float:
    if k < 2:
        return math.nan
    s = sum((2 * i - (k - 1)) ** 2 for i in range(k))
    return math.sqrt(s / (k - 1))


def _empty_targets() -> dict[str, float]:
    """Feature values for a window with no events and no carry-in."""
    out = dict.fromkeys(FEATURE_NAMES, math.nan)
    for name in FEATURE_NAMES:
        if (name.endswith("_num_devices") or name.startswith("notifications_")
                or name.startswith("activity_") or name.startswith("app_")
                or name in ("wifi_connected", "steps_detected", "screen_num_episodes",
                            "screen_total_on", "presence_time", "touch_count")):
            out[name] = 0.0
    return out


def _radio_events(t0: int, radio: str, k: int, center: int, tgt: dict, connected: bool = False):
    value = "signal" if radio.startswith("cellular") else "rssi"
    vals = _symmetric(center, k)
    evs = [RadioScan(t0, f"{radio}-{i}", float(v), (connected and i == 0) if radio == "wifi" else None)
           for i, v in enumerate(vals)]
    tgt[f"{radio}_num_devices"] = float(k)
    if k:
        tgt[f"{radio}_{value}_mean"] = float(center)
        tgt[f"{radio}_{value}_min"] = float(vals[0])
        tgt[f"{radio}_{value}_max"] = float(vals[-1])
        tgt[f"{radio}_{value}_std"] = _sym_std(k)
    if radio == "wifi":
        tgt["wifi_connected"] = 1.0 if (connected and k) else 0.0
    return evs


def _window_events(z: np.ndarray, start: int, width_s: int) -> tuple[dict[str, list], dict[str, float]]:
    """Events for one window and the feature values they produce."""
    W = width_s
    zz = np.zeros(16)
    zz[: min(16, len(z))] = z[:16]
    ev: dict[str, list] = {}
    tgt = _empty_targets()
    ms = 1000

    n_touch = _q(zz[0], 20, 4, 0, 60)
    gap = (W * ms - 10 * ms) // max(n_touch, 1)
    ev["touch"] = [TouchEvent(start + 5 * ms + i * gap) for i in range(n_touch)]
    tgt["touch_count"] = float(n_touch)

    d = _q(zz[1], W // 2, W // 10, 1, W - 20)
    on_t = start + max(5, W - 60 - d) * ms
    off_t = on_t + d * ms
    ev["screen"] = [ScreenEvent(on_t, "on"), ScreenEvent(off_t, "off")]
    tgt.update(screen_num_episodes=1.0, screen_episode_mean=float(d), screen_episode_min=float(d),
               screen_episode_max=float(d), screen_total_on=float(d))

    a = _q(zz[2], d / 2, d / 6, 0, d)
    apps = []
    if a > 0:
        apps.append(AppEvent(on_t, "social"))
    if a < d:
        apps.append(AppEvent(on_t + a * ms, "tools"))
    ev["apps"] = apps
    tgt["app_social"] = float(a)
    tgt["app_tools"] = float(d - a)

    ev["wifi"] = _radio_events(start + 30 * ms, "wifi", _q(zz[3], 4, 1.5, 0, 10),
                               _q(zz[4], -60, 6, -90, -35), tgt, connected=zz[5] > 0)
    ev["bluetooth_le"] = _radio_events(start + 40 * ms, "bluetooth_le", _q(zz[6], 3, 1.5, 0, 10),
                                       _q(zz[7], -75, 5, -100, -40), tgt)
    ev["cellular_lte"] = _radio_events(start + 50 * ms, "cellular_lte", 1,
                                       _q(zz[8], -95, 6, -120, -60), tgt)

    p = _q(zz[9], 5, 2, 0, 20)
    u = (p + 1) // 2
    ev["notifications"] = [NotificationEvent(start + (60 + i) * ms, f"n{i % u}", "posted")
                           for i in range(p)]
    tgt.update(notifications_posted=float(p), notifications_posted_nodup=float(u if p else 0))

    s = _q(zz[10], 30, 15, 0, 200)
    ev["steps"] = [StepsEvent(start + 100 * ms + i * 500, "detected", 1) for i in range(s)]
    tgt["steps_detected"] = float(s)

    w = _q(zz[11], W // 5, W // 10, 0, W)
    acts = []
    if w < W:
        acts.append(ActivityEvent(start, "still"))
    if w > 0:
        acts.append(ActivityEvent(start + (W - w) * ms, "walking"))
    ev["activity"] = acts
    tgt["activity_still"] = float(W - w)
    tgt["activity_walking"] = float(w)

    c = _q(zz[12], 5, 2, 1, 9)
    vals = [c - 1, c, c + 1]
    ev["proximity"] = [ProximityEvent(start + (200 + i) * ms, float(v)) for i, v in enumerate(vals)]
    tgt.update(proximity_mean=float(c), proximity_std=1.0, proximity_min=float(c - 1),
               proximity_max=float(c + 1))

    alt = _q(zz[13], 200, 50, 0, 3000)
    spd = _q(zz[14], 1, 1, 0, 10)
    ev["location"] = [LocationEvent(start + 120 * ms, 45.0, 9.0, float(alt), float(spd))]
    tgt.update(location_radius_of_gyration=0.0, location_distance_traveled=0.0,
               location_altitude_mean=float(alt), location_altitude_min=float(alt),
               location_altitude_max=float(alt), location_speed_mean=float(spd),
               location_speed_min=float(spd), location_speed_max=float(spd))

    pt = _q(zz[15], W // 3, W // 8, 1, W - 20)
    ev["presence"] = [PresenceEvent(start + 10 * ms, "present_start"),
                      PresenceEvent(start + (10 + pt) * ms, "present_end")]
    tgt["presence_time"] = float(pt)
    return ev, tgt


@dataclass
class RawLogs:
    root: Path
    reports: list[SelfReport]
    targets: Dataset        # expected extracted features, registry order


def generate_raw_logs(config: SynthConfig, out_dir: str | Path, width_s: int = 600) -> RawLogs:
    """Write ``<out_dir>/raw/<user>/*.csv`` and ``<out_dir>/reports.csv``.

    Reports of a user are two hours apart, so windows and carry-in lookbacks
    never reach another report's events.
    """
    if width_s < 120:
        raise InvalidConfig("raw-log generation needs a window of at least 120 s")
    synth = generate(config)
    ds = synth.dataset
    out = Path(out_dir)
    raw = out / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    code_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    reports, targets = [], np.full((len(ds), len(FEATURE_NAMES)), np.nan)
    order = np.arange(len(ds))
    for uid in dict.fromkeys(ds.user_id.tolist()):
        rows = order[ds.user_id == uid]
        streams: dict[str, list] = {}
        first = BASE_EPOCH_MS + int(code_rng.integers(0, 3600)) * 1000
        for i, r in enumerate(rows):
            t = first + i * RAW_REPORT_SPACING_MS
            w = window_for(t, width_s)
            ev, tgt = _window_events(synth.latent[r], w.start, width_s)
            for m, events in ev.items():
                streams.setdefault(m, []).extend(events)
            targets[r] = [tgt[n] for n in FEATURE_NAMES]
            reports.append(SelfReport(ds.report_id[r], uid, ds.country[r], t, int(ds.mood_raw[r]),
                                      int(code_rng.integers(1, 35)), int(code_rng.integers(1, 27)),
                                      int(code_rng.integers(1, 9))))
        write_participant(SensorBundle(uid, ds.country[rows[0]], streams), raw)
    write_reports(reports, out / "reports.csv")
    tds = Dataset(targets, FEATURE_NAMES, ds.report_id, ds.user_id, ds.country,
                  np.array([r.ts for r in reports], dtype=np.int64), ds.mood_raw)
    return RawLogs(raw, reports, tds)
