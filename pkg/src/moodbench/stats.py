"""Per-feature inferential statistics and descriptive report distributions."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .core import MoodbenchError, SelfReport
from .dataset import Dataset, Task, encode_labels

DEFAULT_N_BOOT = 1000
DAY_MS = 24 * 3600 * 1000
HOUR_MS = 3600 * 1000


class DegenerateSample(MoodbenchError, ValueError):
    pass


class ZeroPooledSD(MoodbenchError, ValueError):
    pass


@dataclass
class FeatureStat:
    country: str
    class_vs_rest: str
    feature: str
    t_stat: float
    p_value: float
    p_bonferroni: float
    cohens_d: float
    d_ci95: tuple[float, float]
    significant_after_bonferroni: bool
    n_class: int = 0
    n_rest: int = 0


def _t_sf_two_sided(t: float, df: float) -> float:
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_t(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise DegenerateSample("each sample needs at least two values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        raise DegenerateSample("both samples have zero variance")
    sa, sb = va / len(a), vb / len(b)
    se2 = sa + sb
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = se2 * se2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    return t, min(1.0, _t_sf_two_sided(abs(t), df))


def welch_df(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sa, sb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    return float((sa + sb) ** 2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1)))


def bonferroni(p: float, m: int) -> float:
    if m < 1:
        raise ValueError("m must be >= 1")
    return min(1.0, p * m)


def _pooled_sd(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = len(a), len(b)
    return math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))


def _d(a: np.ndarray, b: np.ndarray) -> float:
    sd = _pooled_sd(a, b)
    if sd == 0:
        raise ZeroPooledSD("pooled standard deviation is zero")
    return float((a.mean() - b.mean()) / sd)


def cohens_d(a, b, n_boot: int = DEFAULT_N_BOOT, seed=0) -> tuple[float, tuple[float, float]]:
    """Cohen's d with a percentile bootstrap 95% interval.

    Resamples where both bootstrap samples are constant are skipped.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise DegenerateSample("each sample needs at least two values")
    d = _d(a, b)
    if n_boot <= 0:
        return d, (d, d)
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, len(a), size=(n_boot, len(a)))
    ib = rng.integers(0, len(b), size=(n_boot, len(b)))
    A, B = a[ia], b[ib]
    na, nb = len(a), len(b)
    pooled = np.sqrt(((na - 1) * A.var(axis=1, ddof=1) + (nb - 1) * B.var(axis=1, ddof=1))
                     / (na + nb - 2))
    ok = pooled > 0
    boots = (A.mean(axis=1)[ok] - B.mean(axis=1)[ok]) / pooled[ok]
    if boots.size == 0:
        return d, (d, d)
    lo, hi = np.percentile(boots, [2.5, 97.5])
    # keep lo <= d <= hi even when the bootstrap distribution is skewed away from d
    return d, (float(min(lo, d)), float(max(hi, d)))


@dataclass
class ScreenResult:
    stats: list[FeatureStat]
    top: dict[str, list[FeatureStat]]
    skipped: list[tuple[str, str, str]] = field(default_factory=list)   # (class, feature, reason)
    m: int = 0


def _feature_seed(seed: int, country: str, cls: str, feature: str) -> int:
    return int(zlib.crc32(f"{seed}|{country}|{cls}|{feature}".encode()))


def feature_screen(dataset: Dataset, country: str, task: Task = Task.THREE, k: int = 5,
                   n_boot: int = DEFAULT_N_BOOT, seed: int = 0, alpha: float = 0.05,
                   ci_for: str = "top") -> ScreenResult:
    """One-vs-rest Welch t per (class, feature) on raw values within a country.

    Missing values are dropped per feature. Bonferroni uses
    m = features x classes. Ranking is by |t| descending, ties broken by
    feature order. Bootstrap intervals are computed for the top-k only
    unless ``ci_for="all"``.
    """
    rows = np.flatnonzero(dataset.country == country)
    X = dataset.X[rows]
    y = encode_labels(dataset.mood_raw[rows], task)
    names = dataset.feature_names
    classes = task.classes
    m = len(names) * len(classes)
    stats, top, skipped = [], {}, []
    for ci, cname in enumerate(classes):
        found = []
        for j, fname in enumerate(names):
            col = X[:, j]
            ok = ~np.isnan(col)
            a, b = col[ok & (y == ci)], col[ok & (y != ci)]
            try:
                t, p = welch_t(a, b)
                d = _d(a, b)
            except (DegenerateSample, ZeroPooledSD) as exc:
                skipped.append((cname, fname, str(exc)))
                continue
            found.append((j, a, b, t, p, d))
        found.sort(key=lambda r: (-abs(r[3]), r[0]))
        cls_stats = []
        for rank, (j, a, b, t, p, d) in enumerate(found):
            if ci_for == "all" or rank < k:
                _, interval = cohens_d(a, b, n_boot, _feature_seed(seed, country, cname, names[j]))
            else:
                interval = (math.nan, math.nan)
            pb = bonferroni(p, m)
            cls_stats.append(FeatureStat(country, cname, names[j], t, p, pb, d, interval,
                                         pb < alpha, len(a), len(b)))
        stats.extend(cls_stats)
        top[cname] = cls_stats[:k]
    return ScreenResult(stats, top, skipped, m)


STATS_HEADER = ["country", "class_vs_rest", "rank", "feature", "t_stat", "p_value", "p_bonferroni",
                "cohens_d", "d_ci_lo", "d_ci_hi", "significant_after_bonferroni", "n_class", "n_rest"]


def write_stats_csv(results: Sequence[ScreenResult], path, top_only: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_HEADER)
        for res in results:
            groups = res.top if top_only else {}
            if not top_only:
                for s in res.stats:
                    groups.setdefault(s.class_vs_rest, []).append(s)
            for cname, rows in groups.items():
                for rank, s in enumerate(rows, 1):
                    w.writerow([s.country, cname, rank, s.feature, f"{s.t_stat:.9g}",
                                f"{s.p_value:.9g}", f"{s.p_bonferroni:.9g}", f"{s.cohens_d:.9g}",
                                f"{s.d_ci95[0]:.9g}", f"{s.d_ci95[1]:.9g}",
                                int(s.significant_after_bonferroni), s.n_class, s.n_rest])


def stat_to_json(s: FeatureStat) -> dict:
    d = asdict(s)
    d["d_ci95"] = list(s.d_ci95)
    return d


# ---------------------------------------------------------------------------
# descriptive


def local_hour(ts_ms: int, utc_offset_h: float) -> int:
    local = ts_ms + int(round(utc_offset_h * HOUR_MS))
    return int((local % DAY_MS) // HOUR_MS)


def _shares(mask_group: np.ndarray, pos: np.ndarray) -> dict:
    """Percent of positive and of negative reports falling in the group."""
    out = {}
    for name, sel in (("positive", pos), ("negative", ~pos)):
        n = int(sel.sum())
        out[name] = 100.0 * float((mask_group & sel).sum()) / n if n else math.nan
    return out


def descriptive_report(reports: Sequence[SelfReport], utc_offsets: dict[str, float] | None = None,
                       home_code: int = 1, alone_code: int = 1) -> dict:
    """Per-country class histograms, hourly report counts and context shares.

    Context shares use the two-class reduction: for each of positive and
    negative reports, the percentage given at home and the percentage given
    alone.
    """
    utc_offsets = utc_offsets or {}
    by_country: dict[str, list[SelfReport]] = {}
    for r in reports:
        by_country.setdefault(r.country, []).append(r)
    out = {}
    for c in sorted(by_country):
        rs = by_country[c]
        mood = np.array([r.mood_raw for r in rs], dtype=np.int64)
        two = encode_labels(mood, Task.TWO)
        pos = two == 1
        hours = np.array([local_hour(r.ts, utc_offsets.get(c, 0.0)) for r in rs], dtype=np.int64)
        n = len(rs)
        five = np.bincount(mood, minlength=6)[1:]
        home = np.array([r.location_code == home_code for r in rs])
        alone = np.array([r.social_code == alone_code for r in rs])
        out[c] = {
            "n_reports": n,
            "utc_offset_h": float(utc_offsets.get(c, 0.0)),
            "five_class": {str(k + 1): int(v) for k, v in enumerate(five)},
            "five_class_pct": {str(k + 1): 100.0 * int(v) / n for k, v in enumerate(five)},
            "two_class": {"negative": int((~pos).sum()), "positive": int(pos.sum())},
            "two_class_pct": {"negative": 100.0 * int((~pos).sum()) / n,
                              "positive": 100.0 * int(pos.sum()) / n},
            "hourly": {
                "overall": np.bincount(hours, minlength=24).tolist(),
                "positive": np.bincount(hours[pos], minlength=24).tolist(),
                "negative": np.bincount(hours[~pos], minlength=24).tolist(),
            },
            "context": {"home": _shares(home, pos), "not_home": _shares(~home, pos),
                        "alone": _shares(alone, pos), "not_alone": _shares(~alone, pos)},
        }
    return out
