"""Forecast scoring: MAPE, persistence baselines, spatial correlation, spikes."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

EPS_DEN = 0.01  # $/MWh
SPIKE_MULTIPLIER = 3.0
SPIKE_LOOKBACK = 168

# Published full-scale hold-out MAPEs (%). Kept for comparison only: they need
# year-long ISO feeds that are not reproducible at desk scale.
REFERENCE_MAPE = {
    "ISO-NE 2018": {"VT": 11.03, "NH": 11.25, "ME": 11.82, "WCMA": 10.99, "System": 11.06,
                    "NEMA": 11.05, "CT": 11.04, "RI": 11.01, "SEMA": 11.05},
    "SPP 2017-08-21..2017-09-03": {"SHub": 17.7, "NHub": 19.1},
}


class EvaluationError(ValueError):
    pass


class MapeResult(NamedTuple):
    mape: float  # percent
    n_used: int
    n_excluded: int


def mape(y_true, y_pred, eps_den: float = EPS_DEN) -> MapeResult:
    """Mean absolute percentage error over hours with ``|y| > eps_den``."""
    y = np.asarray(y_true, dtype=np.float64).ravel()
    yh = np.asarray(y_pred, dtype=np.float64).ravel()
    if y.shape != yh.shape or y.size == 0:
        raise EvaluationError("series must be aligned and non-empty")
    keep = np.abs(y) > eps_den
    if not keep.any():
        raise EvaluationError("every hour excluded by the near-zero denominator rule")
    err = np.abs(y[keep] - yh[keep]) / np.abs(y[keep])
    return MapeResult(100.0 * float(err.mean()), int(keep.sum()), int((~keep).sum()))


def spatial_correlation_matrix(series) -> np.ndarray:
    """Pairwise Pearson matrix of ``(T, K)`` zone series.

    Rows/columns of zero-variance zones are NaN (their diagonal included).
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise EvaluationError("need a (T, K) array with T >= 2")
    d = x - x.mean(axis=0)
    sd = np.sqrt((d * d).sum(axis=0))
    bad = sd == 0
    if bad.any():
        warnings.warn(f"zero-variance zones {np.flatnonzero(bad).tolist()}; correlations undefined",
                      RuntimeWarning, stacklevel=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (d.T @ d) / np.outer(sd, sd)
    c = np.clip((c + c.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    c[bad, :] = np.nan
    c[:, bad] = np.nan
    return c


def correlation_distance(a, b) -> float:
    """Frobenius distance over entries defined in both matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ok = np.isfinite(a) & np.isfinite(b)
    return float(np.sqrt(np.sum((a[ok] - b[ok]) ** 2)))


def persistence_forecasts(truth, start: int, end: int | None = None, lag: int = 1):
    y = np.asarray(truth, dtype=np.float64)
    end = len(y) if end is None else end
    if start < lag:
        raise EvaluationError(f"{lag}h persistence needs {lag} hours of history before the span")
    return y[start - lag : end - lag]


def persistence_baselines(truth, start: int, end: int | None = None,
                          eps_den: float = EPS_DEN) -> dict[str, MapeResult]:
    """MAPE of repeating the price from 1 and 24 hours earlier over ``[start, end)``."""
    y = np.asarray(truth, dtype=np.float64)
    end = len(y) if end is None else end
    scored = y[start:end]
    return {
        f"persistence_{lag}h": mape(scored, persistence_forecasts(y, start, end, lag), eps_den)
        for lag in (1, 24)
    }


def spike_thresholds(y_true, multiplier: float = SPIKE_MULTIPLIER,
                     lookback: int = SPIKE_LOOKBACK) -> np.ndarray:
    """``multiplier`` x trailing median for every hour ``t >= lookback`` (per zone)."""
    y = np.asarray(y_true, dtype=np.float64)
    if len(y) <= lookback:
        raise EvaluationError(f"need more than {lookback} hours for spike thresholds")
    win = np.lib.stride_tricks.sliding_window_view(y[:-1], lookback, axis=0)
    return multiplier * np.median(win, axis=-1)


def spike_recall(y_true, y_pred, threshold_multiplier: float = SPIKE_MULTIPLIER,
                 lookback: int = SPIKE_LOOKBACK) -> float | None:
    """Share of truth-spike hours where the prediction also crosses the threshold.

    Both series are aligned; only hours after the first ``lookback`` are
    scored.  Returns ``None`` when there are no spikes to capture.
    """
    y = np.asarray(y_true, dtype=np.float64)
    yh = np.asarray(y_pred, dtype=np.float64)
    if y.shape != yh.shape:
        raise EvaluationError("series must be aligned")
    thr = spike_thresholds(y, threshold_multiplier, lookback)
    spikes = y[lookback:] > thr
    n = int(spikes.sum())
    if n == 0:
        return None
    return float((yh[lookback:] > thr)[spikes].sum()) / n


def shuffled_control(pred, seed: int = 0) -> np.ndarray:
    """Independently time-permute every zone: same marginals, no co-movement."""
    rng = np.random.default_rng(seed)
    x = np.array(pred, dtype=np.float64)
    for k in range(x.shape[1]):
        x[:, k] = x[rng.permutation(x.shape[0]), k]
    return x


@dataclass
class ScoreReport:
    zones: Sequence[str]
    zone_mape: dict[str, MapeResult]
    aggregate: MapeResult
    baselines: dict[str, MapeResult]
    corr_pred: np.ndarray
    corr_true: np.ndarray
    corr_distance: float
    spike_recall: float | None
    extra: dict[str, MapeResult] = field(default_factory=dict)

    def rows(self):
        yield ("scope", "metric", "value", "n_used", "n_excluded")
        for z in self.zones:
            r = self.zone_mape[z]
            yield (z, "mape_pct", _f(r.mape), r.n_used, r.n_excluded)
        a = self.aggregate
        yield ("all", "mape_pct", _f(a.mape), a.n_used, a.n_excluded)
        for name, r in {**self.baselines, **self.extra}.items():
            yield ("all", f"{name}_mape_pct", _f(r.mape), r.n_used, r.n_excluded)
        yield ("all", "corr_frobenius", _f(self.corr_distance), "", "")
        yield ("all", "spike_recall", "N/A" if self.spike_recall is None else _f(self.spike_recall), "", "")

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.rows())

    def table(self) -> str:
        rows = list(self.rows())
        widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _f(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"


def score(y_true, y_pred, zones: Sequence[str], history=None, eps_den: float = EPS_DEN,
          spike_multiplier: float = SPIKE_MULTIPLIER, extra_predictions=None) -> ScoreReport:
    """Score ``(H, K)`` predictions in $/MWh.

    ``history`` holds the truth for hours immediately preceding the scored
    span (at least 24 for baselines, ``SPIKE_LOOKBACK`` for spike recall).
    """
    y = np.asarray(y_true, dtype=np.float64)
    yh = np.asarray(y_pred, dtype=np.float64)
    if y.shape != yh.shape or y.ndim != 2 or y.shape[1] != len(zones):
        raise EvaluationError("truth/prediction must be aligned (H, K) arrays")
    zone_mape = {z: mape(y[:, k], yh[:, k], eps_den) for k, z in enumerate(zones)}
    baselines = {}
    recall = None
    if history is not None:
        h = np.asarray(history, dtype=np.float64)
        full = np.vstack([h, y])
        if len(h) >= 24:
            baselines = persistence_baselines(full, len(h), eps_den=eps_den)
        if len(h) >= SPIKE_LOOKBACK:
            pad = np.vstack([h, yh])
            recall = spike_recall(full[len(h) - SPIKE_LOOKBACK :], pad[len(h) - SPIKE_LOOKBACK :],
                                  spike_multiplier)
    ct = spatial_correlation_matrix(y)
    cp = spatial_correlation_matrix(yh)
    extra = {name: mape(y, p, eps_den) for name, p in (extra_predictions or {}).items()}
    return ScoreReport(list(zones), zone_mape, mape(y, yh, eps_den), baselines, cp, ct,
                       correlation_distance(cp, ct), recall, extra)
