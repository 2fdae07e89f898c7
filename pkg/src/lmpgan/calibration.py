"""ARMA correction of the gap between true and generated prices.

For each zone the residual ``y - y_gan`` is modelled as ARMA(p, q)::

    r(t) - mu = sum_k phi_k (r(t-k) - mu) + sum_k theta_k e(t-k) + e(t)

estimated with the two-stage Hannan-Rissanen regression, and its one-step
forecast is added back onto the next generated price.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

logger = logging.getLogger(__name__)

MIN_OBS_PER_PARAM = 20


class CalibrationError(ValueError):
    pass


class InsufficientDataError(CalibrationError):
    pass


class SingularRegressionError(CalibrationError):
    pass


@dataclass(frozen=True)
class ArmaModel:
    p: int
    q: int
    mu: float
    phi: tuple[float, ...] = ()
    theta: tuple[float, ...] = ()
    sigma2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        if len(self.phi) != self.p or len(self.theta) != self.q:
            raise ValueError("coefficient counts must match (p, q)")

    @property
    def causal(self) -> bool:
        return _roots_outside(np.r_[1.0, -np.array(self.phi)])

    @property
    def invertible(self) -> bool:
        return _roots_outside(np.r_[1.0, np.array(self.theta)])


def _roots_outside(poly) -> bool:
    # poly[k] multiplies z**k
    if len(poly) == 1:
        return True
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0))


def _lagged(x, lags, start):
    """Design columns ``x[t-1], ..., x[t-lags]`` for ``t >= start``."""
    n = len(x)
    return np.column_stack([x[start - k : n - k] for k in range(1, lags + 1)]) if lags else np.empty((n - start, 0))


def _lstsq(X, y):
    if X.shape[0] <= X.shape[1]:
        raise SingularRegressionError("fewer observations than regressors")
    if X.shape[1] and np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularRegressionError("collinear lag regressors")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return beta


def long_ar_order(n: int, p: int, q: int) -> int:
    return min(max(p + q + 1, math.ceil(10 * math.log10(n))), n // 4)


def fit_arma(series, p: int, q: int) -> ArmaModel:
    """Hannan-Rissanen: a long AR fit supplies innovation estimates, then
    a least-squares regression on lagged values and lagged innovations."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if p < 0 or q < 0:
        raise ValueError("orders must be non-negative")
    n = len(x)
    if n < MIN_OBS_PER_PARAM * (p + q + 1):
        raise InsufficientDataError(
            f"ARMA({p},{q}) needs at least {MIN_OBS_PER_PARAM * (p + q + 1)} points, got {n}"
        )
    if not np.all(np.isfinite(x)):
        raise CalibrationError("residual series contains non-finite values")
    mu = float(x.mean())
    z = x - mu
    if p == 0 and q == 0:
        return ArmaModel(0, 0, mu, sigma2=float(z @ z / n))

    start = p
    eps = None
    if q:
        m = long_ar_order(n, p, q)
        a = _lstsq(_lagged(z, m, m), z[m:])
        eps = np.zeros(n)
        eps[m:] = z[m:] - _lagged(z, m, m) @ a
        start = max(p, m + q)
    X = _lagged(z, p, start)
    if q:
        X = np.hstack([X, _lagged(eps, q, start)])
    beta = _lstsq(X, z[start:])
    resid = z[start:] - X @ beta
    model = ArmaModel(p, q, mu, beta[:p], beta[p:], float(resid @ resid / len(resid)))
    if not model.causal:
        warnings.warn(f"fitted ARMA({p},{q}) is not causal", RuntimeWarning, stacklevel=2)
    if not model.invertible:
        warnings.warn(f"fitted ARMA({p},{q}) is not invertible", RuntimeWarning, stacklevel=2)
    return model


def innovations(model: ArmaModel, series) -> np.ndarray:
    """One-step prediction errors, with pre-sample terms set to zero."""
    z = np.asarray(series, dtype=np.float64).ravel() - model.mu
    return lfilter(np.r_[1.0, -np.array(model.phi)], np.r_[1.0, np.array(model.theta)], z)


def forecast_delta(model: ArmaModel, residuals, innovations_=None) -> float:
    """One-step-ahead residual forecast from the most recent history."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    need = max(model.p, model.q)
    if len(r) < need:
        raise InsufficientDataError(f"need {need} past residuals, got {len(r)}")
    if model.q and innovations_ is None:
        innovations_ = innovations(model, r)
    out = model.mu
    for k, f in enumerate(model.phi, start=1):
        out += f * (r[-k] - model.mu)
    if model.q:
        e = np.asarray(innovations_, dtype=np.float64).ravel()
        if len(e) < model.q:
            raise InsufficientDataError(f"need {model.q} past innovations, got {len(e)}")
        for k, th in enumerate(model.theta, start=1):
            out += th * e[-k]
    return float(out)


def bic(model: ArmaModel, series, start: int) -> float:
    e = innovations(model, series)[start:]
    s2 = max(float(e @ e) / len(e), 1e-300)
    n = len(e)
    return n * math.log(s2) + (model.p + model.q + 1) * math.log(n)


def select_order(series, p_max: int = 3, q_max: int = 3) -> tuple[int, int]:
    """Grid search minimizing BIC; ties go to smaller ``p+q``, then smaller ``p``."""
    x = np.asarray(series, dtype=np.float64).ravel()
    start = max(p_max, q_max)
    scored = []
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    m = fit_arma(x, p, q)
                scored.append((bic(m, x, start), p + q, p, q))
            except CalibrationError:
                continue
    if not scored:
        warnings.warn("no ARMA order could be fitted; falling back to (1, 1)", RuntimeWarning,
                      stacklevel=2)
        return (1, 1)
    best = min(scored, key=lambda s: (s[0], s[1], s[2]))
    return best[2], best[3]


@dataclass
class CalibrationResult:
    calibrated: np.ndarray
    delta: np.ndarray
    orders: list[tuple[int, tuple[int, int]]] = field(default_factory=list)


def calibrate(y_gan, y_true, window: int = 168, refit_every: int = 24, p_max: int = 3,
              q_max: int = 3, order: tuple[int, int] | None = None) -> CalibrationResult:
    """Rolling ARMA correction of one zone's generated prices.

    The correction for hour ``i`` uses residuals of hours ``i-window .. i-1``
    only, with the model refitted every ``refit_every`` hours.  The first
    ``window`` hours have no history and are passed through unchanged.
    """
    yg = np.asarray(y_gan, dtype=np.float64).ravel()
    yt = np.asarray(y_true, dtype=np.float64).ravel()
    if yg.shape != yt.shape:
        raise CalibrationError("predictions and truths must be aligned")
    T = len(yg)
    if T <= window:
        raise InsufficientDataError(f"window of {window} hours exceeds the {T} hours available")
    r = yt - yg
    delta = np.zeros(T)
    orders = []
    model = None
    for i in range(window, T):
        hist = r[i - window : i]
        if model is None or (i - window) % refit_every == 0:
            pq = order or select_order(hist, p_max, q_max)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    model = fit_arma(hist, *pq)
            except CalibrationError:
                logger.debug("ARMA%s fit failed at hour %d; using the mean", pq, i)
                model = fit_arma(hist, 0, 0)
            orders.append((i, (model.p, model.q)))
        delta[i] = forecast_delta(model, hist)
    return CalibrationResult(yg + delta, delta, orders)


def calibrate_zones(y_gan, y_true, **kwargs) -> CalibrationResult:
    """Independent per-zone calibration of ``(T, K)`` arrays."""
    yg = np.asarray(y_gan, dtype=np.float64)
    yt = np.asarray(y_true, dtype=np.float64)
    results = [calibrate(yg[:, k], yt[:, k], **kwargs) for k in range(yg.shape[1])]
    return CalibrationResult(
        np.column_stack([r.calibrated for r in results]),
        np.column_stack([r.delta for r in results]),
        [(k, r.orders) for k, r in enumerate(results)],
    )


def simulate_arma(phi=(), theta=(), n=10_000, sigma=1.0, mu=0.0, seed=0, burn=500) -> np.ndarray:
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sigma, n + burn)
    z = lfilter(np.r_[1.0, np.array(theta, dtype=float)], np.r_[1.0, -np.array(phi, dtype=float)], e)
    return z[burn:] + mu
