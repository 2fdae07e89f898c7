"""Market data images and videos.

Raw zonal time series are packed into an ``(T, M, N, F)`` array: one
``M x N`` grid per hour, one channel per feature.  Channel 0 is always the
real-time LMP.  Normalization maps each feature to ``[-1, 1]`` on the
training span with a shifted log transform, and the inverse transform is
exact so predictions can be reported in $/MWh.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

RTLMP = "rtlmp"
HOUR = np.timedelta64(1, "h")
MAX_FILL_HOURS = 6
CPLUS_FLOOR = 1e-6


class MarketDataError(ValueError):
    """Raised for malformed or unusable market data."""


class DegenerateStatsError(MarketDataError):
    pass


class DataWarning(UserWarning):
    """Recoverable data problem (forward fill, clamping, constant channel)."""


@dataclass(frozen=True)
class GridLayout:
    """Row-major assignment of zones to the cells of an ``rows x cols`` grid."""

    rows: int
    cols: int
    zone_order: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "zone_order", tuple(self.zone_order))
        if self.rows < 1 or self.cols < 1:
            raise MarketDataError(f"grid must be positive, got {self.rows}x{self.cols}")
        if len(self.zone_order) != self.rows * self.cols:
            raise MarketDataError(
                f"zone_order has {len(self.zone_order)} entries, "
                f"expected {self.rows * self.cols}"
            )
        if len(set(self.zone_order)) != len(self.zone_order):
            raise MarketDataError("zone_order entries must be unique")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def cell(self, zone: str) -> tuple[int, int]:
        k = self.zone_order.index(zone)
        return divmod(k, self.cols)

    def neighbors(self) -> list[tuple[int, int]]:
        """Pairs of zone indices that share a grid edge."""
        pairs = []
        for k in range(self.rows * self.cols):
            i, j = divmod(k, self.cols)
            if j + 1 < self.cols:
                pairs.append((k, k + 1))
            if i + 1 < self.rows:
                pairs.append((k, k + self.cols))
        return pairs


@dataclass(frozen=True)
class NormStats:
    feature: str
    min_c: float
    max_cplus: float

    def __post_init__(self):
        if not (math.isfinite(self.min_c) and math.isfinite(self.max_cplus)):
            raise MarketDataError(f"non-finite stats for {self.feature!r}")
        if self.max_cplus < 1.0:
            raise MarketDataError(
                f"max_Cplus must be >= 1 for {self.feature!r}, got {self.max_cplus}"
            )

    @property
    def degenerate(self) -> bool:
        return self.max_cplus <= 1.0


@dataclass(frozen=True)
class MarketFrame:
    timestamp: np.datetime64
    values: np.ndarray  # (M, N, F)
    layout: GridLayout


@dataclass(frozen=True)
class MarketVideo:
    """Gap-free hourly sequence of market frames sharing one layout."""

    timestamps: np.ndarray  # datetime64[h], shape (T,)
    values: np.ndarray  # float64, shape (T, M, N, F)
    layout: GridLayout
    features: tuple[str, ...]
    normalized: bool = False

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[h]")
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "features", tuple(self.features))
        if vals.ndim != 4 or vals.shape[1:3] != self.layout.shape:
            raise MarketDataError(
                f"values shape {vals.shape} does not match layout {self.layout.shape}"
            )
        if vals.shape[3] != len(self.features):
            raise MarketDataError("feature count does not match channel count")
        if ts.shape != (vals.shape[0],):
            raise MarketDataError("one timestamp per frame required")
        if len(ts) > 1 and not np.all(np.diff(ts) == HOUR):
            raise MarketDataError("timestamps must be strictly hourly and gap-free")
        if self.features and self.features[0] != RTLMP:
            raise MarketDataError(f"channel 0 must be {RTLMP!r}, got {self.features[0]!r}")
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, t: int) -> MarketFrame:
        return MarketFrame(self.timestamps[t], self.values[t], self.layout)

    @property
    def frames(self) -> list[MarketFrame]:
        return [self[t] for t in range(len(self))]

    def channel(self, feature: str) -> np.ndarray:
        """``(T, M, N)`` view of one feature."""
        return self.values[..., self.features.index(feature)]

    def zone_series(self, feature: str = RTLMP) -> np.ndarray:
        """``(T, K)`` array, zones in layout order."""
        c = self.channel(feature)
        return c.reshape(len(self), -1)

    def index_of(self, timestamp) -> int:
        ts = np.datetime64(timestamp, "h")
        k = int((ts - self.timestamps[0]) / HOUR)
        if not 0 <= k < len(self):
            raise MarketDataError(f"{ts} outside video span")
        return k

    def slice(self, start: int, stop: int) -> "MarketVideo":
        return MarketVideo(
            self.timestamps[start:stop],
            self.values[start:stop],
            self.layout,
            self.features,
            self.normalized,
        )

    def split_at(self, timestamp) -> tuple["MarketVideo", "MarketVideo"]:
        k = self.index_of(timestamp)
        return self.slice(0, k), self.slice(k, len(self))


@dataclass(frozen=True)
class Sample:
    """History window ``x`` of shape ``(n, M, N, F)`` and RTLMP target ``y`` ``(M, N, 1)``."""

    x: np.ndarray
    y: np.ndarray
    target_time: np.datetime64
    x_times: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# ingestion


def parse_timestamp(text: str) -> np.datetime64:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1]
    elif s.endswith("+00:00"):
        s = s[:-6]
    ts = np.datetime64(s, "s")
    if ts != ts.astype("datetime64[h]"):
        raise ValueError(f"timestamp {text!r} is not on a whole hour")
    return ts.astype("datetime64[h]")


def format_timestamp(ts) -> str:
    return str(np.datetime64(ts, "h").astype("datetime64[s]")) + "Z"


def ingest_csv(path, layout: GridLayout, feature_list: Sequence[str]) -> MarketVideo:
    """Read a wide-form zonal CSV into a raw (un-normalized) video.

    Single missing cells are forward-filled from the previous hour of the
    same zone, up to ``MAX_FILL_HOURS`` consecutive hours.
    """
    path = Path(path)
    features = tuple(feature_list)
    if not features or features[0] != RTLMP:
        raise MarketDataError(f"feature list must start with {RTLMP!r}")
    zone_index = {z: k for k, z in enumerate(layout.zone_order)}
    records: dict[tuple[np.datetime64, int], np.ndarray] = {}

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MarketDataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["timestamp", "zone"]:
            raise MarketDataError(f"{path}:1: header must start with 'timestamp,zone'")
        missing = [f for f in features if f not in header[2:]]
        if missing:
            raise MarketDataError(f"{path}:1: missing feature columns {missing}")
        cols = [header.index(f) for f in features]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MarketDataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                ts = parse_timestamp(row[0])
            except ValueError as exc:
                raise MarketDataError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from exc
            zone = row[1].strip()
            if zone not in zone_index:
                raise MarketDataError(f"{path}:{lineno}: unknown zone_id {zone!r}")
            try:
                vals = np.array([float(row[c]) for c in cols])
            except ValueError as exc:
                raise MarketDataError(f"{path}:{lineno}: {exc}") from exc
            if not np.all(np.isfinite(vals)):
                raise MarketDataError(f"{path}:{lineno}: non-finite value")
            key = (ts, zone_index[zone])
            if key in records:
                raise MarketDataError(f"{path}:{lineno}: duplicate row for {zone} at {row[0]}")
            records[key] = vals

    if not records:
        raise MarketDataError(f"{path}: no data rows")
    times = sorted({k[0] for k in records})
    t0, t1 = times[0], times[-1]
    T = int((t1 - t0) / HOUR) + 1
    K = len(layout.zone_order)
    data = np.full((T, K, len(features)), np.nan)
    for (ts, k), vals in records.items():
        data[int((ts - t0) / HOUR), k] = vals

    timestamps = t0 + np.arange(T) * HOUR
    _forward_fill(data, timestamps, layout)
    values = data.reshape(T, layout.rows, layout.cols, len(features))
    return MarketVideo(timestamps, values, layout, features)


def _forward_fill(data: np.ndarray, timestamps: np.ndarray, layout: GridLayout) -> None:
    T, K, _ = data.shape
    for k in range(K):
        missing = np.isnan(data[:, k, 0])
        if not missing.any():
            continue
        zone = layout.zone_order[k]
        t = 0
        while t < T:
            if not missing[t]:
                t += 1
                continue
            start = t
            while t < T and missing[t]:
                t += 1
            span = (format_timestamp(timestamps[start]), format_timestamp(timestamps[t - 1]))
            if start == 0:
                raise MarketDataError(
                    f"zone {zone}: no prior hour to fill from, missing {span[0]}..{span[1]}"
                )
            if t - start > MAX_FILL_HOURS:
                raise MarketDataError(
                    f"zone {zone}: {t - start} consecutive missing hours {span[0]}..{span[1]}"
                )
            data[start:t, k] = data[start - 1, k]
            warnings.warn(
                f"zone {zone}: forward-filled {t - start} hour(s) {span[0]}..{span[1]}",
                DataWarning,
                stacklevel=3,
            )


def write_csv(video: MarketVideo, path) -> None:
    """Write a raw video in the wide-form CSV schema."""
    T = len(video)
    flat = video.values.reshape(T, -1, len(video.features))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "zone", *video.features])
        for t in range(T):
            ts = format_timestamp(video.timestamps[t])
            for k, zone in enumerate(video.layout.zone_order):
                w.writerow([ts, zone, *(f"{v:.6f}" for v in flat[t, k])])


# ---------------------------------------------------------------------------
# normalization


def fit_norm_stats(video: MarketVideo, feature: str) -> NormStats:
    if len(video) == 0:
        raise MarketDataError("cannot fit stats on an empty video")
    c = video.channel(feature)
    min_c = float(c.min())
    max_cplus = float((c - min_c + 1.0).max())
    return NormStats(feature, min_c, max_cplus)


def fit_all_stats(video: MarketVideo) -> dict[str, NormStats]:
    return {f: fit_norm_stats(video, f) for f in video.features}


def normalize(value, stats: NormStats):
    """Shifted-log map of raw values onto ``[-1, 1]`` (training span).

    Values below ``min_c - 1`` would give a non-positive log argument; they
    are clamped to ``CPLUS_FLOOR`` with a warning.
    """
    if stats.degenerate:
        raise DegenerateStatsError(
            f"feature {stats.feature!r} is constant (max_Cplus = 1); "
            "emit the channel as zeros instead of normalizing"
        )
    cplus = np.asarray(value, dtype=np.float64) - stats.min_c + 1.0
    if np.any(cplus <= 0):
        warnings.warn(
            f"{stats.feature}: {int(np.sum(cplus <= 0))} value(s) below training range "
            f"clamped to c+={CPLUS_FLOOR}",
            DataWarning,
            stacklevel=2,
        )
        cplus = np.maximum(cplus, CPLUS_FLOOR)
    half = math.log(stats.max_cplus) / 2.0
    out = (np.log(cplus) - half) / half
    return float(out) if np.ndim(out) == 0 else out


def denormalize(norm_value, stats: NormStats):
    if stats.degenerate:
        out = np.zeros_like(np.asarray(norm_value, dtype=np.float64)) + stats.min_c
    else:
        half = math.log(stats.max_cplus) / 2.0
        out = np.exp(np.asarray(norm_value, dtype=np.float64) * half + half) + stats.min_c - 1.0
    return float(out) if np.ndim(out) == 0 else out


def make_video(raw: MarketVideo, stats_per_feature: Mapping[str, NormStats]) -> MarketVideo:
    if raw.normalized:
        raise MarketDataError("video is already normalized")
    out = np.empty_like(raw.values)
    for f_idx, feature in enumerate(raw.features):
        if feature not in stats_per_feature:
            raise MarketDataError(f"no normalization stats for channel {feature!r}")
        stats = stats_per_feature[feature]
        if stats.degenerate:
            warnings.warn(f"{feature}: constant channel emitted as zeros", DataWarning, stacklevel=2)
            out[..., f_idx] = 0.0
        else:
            out[..., f_idx] = normalize(raw.values[..., f_idx], stats)
    return MarketVideo(raw.timestamps, out, raw.layout, raw.features, normalized=True)


def save_stats(stats: Mapping[str, NormStats], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("feature,min_C,max_Cplus\n")
        for s in stats.values():
            fh.write(f"{s.feature},{s.min_c:.17g},{s.max_cplus:.17g}\n")


def load_stats(path) -> dict[str, NormStats]:
    out = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["feature", "min_C", "max_Cplus"]:
            raise MarketDataError(f"{path}: bad stats header {header}")
        for row in reader:
            if row:
                out[row[0]] = NormStats(row[0], float(row[1]), float(row[2]))
    return out


# ---------------------------------------------------------------------------
# windows and screening


def window(video: MarketVideo, n: int) -> list[Sample]:
    T = len(video)
    if n < 1:
        raise ValueError("history length must be >= 1")
    if T <= n:
        raise MarketDataError(f"video has {T} frames; need at least {n + 1} for n={n}")
    v = video.values
    return [
        Sample(
            x=v[i : i + n],
            y=v[i + n, :, :, :1],
            target_time=video.timestamps[i + n],
            x_times=video.timestamps[i : i + n],
        )
        for i in range(T - n)
    ]


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise MarketDataError("correlation needs two aligned series of length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        raise MarketDataError("zero variance series; correlation undefined")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def feature_correlation(video_raw: MarketVideo, feature: str, target: str = RTLMP) -> float:
    """Pearson coefficient over pooled (zone, hour) pairs."""
    return pearson(video_raw.channel(feature), video_raw.channel(target))


def screen_features(video_raw: MarketVideo, candidates: Iterable[str] | None = None,
                    target: str = RTLMP) -> list[tuple[str, float]]:
    """Candidate features ranked by absolute correlation with the target."""
    names = [f for f in (candidates or video_raw.features) if f != target]
    scored = [(f, feature_correlation(video_raw, f, target)) for f in names]
    return sorted(scored, key=lambda p: -abs(p[1]))


# ---------------------------------------------------------------------------
# synthetic markets

SYNTH_FEATURES = (RTLMP, "dalmp", "demand")


def default_layout(rows: int = 3, cols: int = 3) -> GridLayout:
    return GridLayout(rows, cols, tuple(f"Z{k + 1}" for k in range(rows * cols)))


def synth_market(seed: int, layout: GridLayout, T: int, spike_rate: float = 0.01,
                 start: str = "2017-01-01T00") -> MarketVideo:
    """Deterministic synthetic zonal market with RTLMP, DALMP and demand.

    Prices combine a zone base level, demand-driven load following, daily and
    weekly cycles, spatially smooth shocks and occasional spikes that hit a
    zone and its grid neighbours.  ``spike_rate`` is the expected number of
    spike events per hour.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    M, N = layout.shape
    K = M * N
    hours = np.arange(T)
    t0 = np.datetime64(start, "h")
    hod = (hours + int((t0 - t0.astype("datetime64[D]")) / HOUR)) % 24
    dow = ((t0.astype("datetime64[D]") - np.datetime64("1970-01-05", "D")).astype(int) * 24
           + int((t0 - t0.astype("datetime64[D]")) / HOUR) + hours) // 24 % 7

    ii, jj = np.divmod(np.arange(K), N)
    # zone personality: smooth in space so neighbours look alike
    base = 38.0 + 4.0 * (ii / max(M - 1, 1)) + 3.0 * (jj / max(N - 1, 1)) + rng.normal(0, 1.0, K)
    phase = 0.4 * (jj / max(N - 1, 1)) + rng.normal(0, 0.05, K)
    amp = 1.0 + 0.15 * (ii / max(M - 1, 1))
    peak = 2 * np.pi * (hod[:, None] - 9.0) / 24.0

    weekly = np.where(dow >= 5, -0.08, 0.02)[:, None]
    demand_shape = 0.22 * np.sin(peak - phase[None, :]) + 0.07 * np.sin(2 * peak - phase[None, :])
    demand_scale = 900.0 + 150.0 * rng.random(K)
    load_noise = _ar1(rng, (T, K), 0.95, 0.015)
    demand = demand_scale * (1.0 + demand_shape + weekly + load_noise)

    # spatially smooth shocks: persistent part plus an hourly part
    persistent = _smooth_field(_ar1(rng, (T, K), 0.85, 1.5), M, N)
    hourly = _smooth_field(rng.normal(0.0, 3.0, (T, K)), M, N)
    rel_demand = demand / demand_scale - 1.0
    rt = base + amp * 45.0 * rel_demand + persistent + hourly

    if spike_rate > 0:
        n_events = rng.poisson(spike_rate * T)
        for _ in range(n_events):
            t = int(rng.integers(T))
            k = int(rng.integers(K))
            mult = rng.uniform(2.0, 5.0)
            dur = int(rng.integers(1, 3))
            hit = [k] + [b if a == k else a for a, b in layout.neighbors() if k in (a, b)]
            for kk in hit:
                scale = mult if kk == k else 1.0 + 0.5 * (mult - 1.0)
                rt[t : t + dur, kk] *= scale
    rt = np.maximum(rt, 1.0)

    da = np.empty_like(rt)
    da[0] = rt[0]
    for t in range(1, T):
        da[t] = 0.8 * da[t - 1] + 0.2 * rt[t]
    da = da + rng.normal(0.0, 1.0, (T, K))

    values = np.stack([rt, da, demand], axis=-1).reshape(T, M, N, len(SYNTH_FEATURES))
    return MarketVideo(t0 + hours * HOUR, values, layout, SYNTH_FEATURES)


def _ar1(rng, shape, phi, sigma):
    e = rng.normal(0.0, sigma, shape)
    out = np.empty(shape)
    out[0] = e[0] / math.sqrt(1 - phi * phi)
    for t in range(1, shape[0]):
        out[t] = phi * out[t - 1] + e[t]
    return out


def _smooth_field(noise: np.ndarray, M: int, N: int) -> np.ndarray:
    """Mix each zone with a common component and its grid neighbours."""
    T = noise.shape[0]
    g = noise.reshape(T, M, N)
    acc = g.copy()
    cnt = np.ones((M, N))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        src = g[:, max(di, 0) : M + min(di, 0), max(dj, 0) : N + min(dj, 0)]
        acc[:, max(-di, 0) : M + min(-di, 0), max(-dj, 0) : N + min(-dj, 0)] += src
        cnt[max(-di, 0) : M + min(-di, 0), max(-dj, 0) : N + min(-dj, 0)] += 1
    local = acc / cnt
    common = g.mean(axis=(1, 2), keepdims=True)
    return (0.5 * local + 0.5 * common * math.sqrt(M * N) / 1.5).reshape(T, M * N)
