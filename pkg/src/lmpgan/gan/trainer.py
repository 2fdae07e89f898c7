"""Adversarial training and hour-by-hour prediction."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..market_data import HOUR, MarketDataError, MarketVideo, NormStats, Sample
from ..nn_core import checkpoint
from ..nn_core import network as nn
from . import losses
from .architecture import discriminator_spec, generator_spec
from .config import GanConfig

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "loss_D", "loss_G", "adv", "lp", "gdl", "dcl", "val_l2")
PREDICT_CHUNK = 256


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    pass


@dataclass
class GanModel:
    generator: nn.NetworkState
    discriminator: nn.NetworkState
    config: GanConfig
    features: tuple[str, ...] = ()
    stats: dict[str, NormStats] = field(default_factory=dict)
    iteration: int = 0
    val_history: list = field(default_factory=list)

    @property
    def grid(self):
        return self.generator.spec.input_shape[1:]

    def save(self, path) -> None:
        extra = {
            "config": self.config.to_dict(),
            "features": list(self.features),
            "stats": [[s.feature, repr(s.min_c), repr(s.max_cplus)] for s in self.stats.values()],
            "val_history": [[int(i), repr(float(v))] for i, v in self.val_history],
        }
        checkpoint.save(path, {"G": self.generator, "D": self.discriminator},
                        self.config.seed, self.iteration, extra)

    @classmethod
    def load(cls, path) -> "GanModel":
        nets, header = checkpoint.load(path)
        extra = header["extra"]
        stats = {f: NormStats(f, float(a), float(b)) for f, a, b in extra.get("stats", [])}
        return cls(
            nets["G"], nets["D"], GanConfig.from_dict(extra["config"]),
            tuple(extra.get("features", ())), stats, header["iteration"],
            [(int(i), float(v)) for i, v in extra.get("val_history", [])],
        )


def g_channels(n_features: int, config: GanConfig) -> int:
    return config.n * n_features + config.extra_channels


def build_model(n_features: int, config: GanConfig, grid=(3, 3), stats=None, features=()) -> GanModel:
    gspec = generator_spec(g_channels(n_features, config), grid, config.width)
    dspec = discriminator_spec(config.n + 1, grid, config.width)
    return GanModel(
        nn.init_params(gspec, config.seed),
        nn.init_params(dspec, config.seed + 1),
        config,
        tuple(features),
        dict(stats or {}),
    )


# ---------------------------------------------------------------------------
# tensor assembly


def calendar_planes(times, k: int, grid) -> np.ndarray:
    """``(B, k, M, N)`` sin/cos encodings of hour of day (and day of week)."""
    times = np.asarray(times, dtype="datetime64[h]")
    hours = times.astype(np.int64)
    hod = 2 * np.pi * (hours % 24) / 24.0
    cols = [np.sin(hod), np.cos(hod)]
    if k == 4:
        dow = 2 * np.pi * ((hours // 24 + 3) % 7) / 7.0  # 1970-01-01 was a Thursday
        cols += [np.sin(dow), np.cos(dow)]
    planes = np.stack(cols, axis=1)[:, :, None, None]
    return np.broadcast_to(planes, planes.shape[:2] + tuple(grid)).copy()


def g_input(x: np.ndarray, config: GanConfig, target_times=None) -> np.ndarray:
    """History ``(B, n, M, N, F)`` -> generator input ``(B, n*F [+cal], M, N)``."""
    b, n, m, nn_, f = x.shape
    if n != config.n:
        raise nn.ShapeError(f"expected {config.n} history frames, got {n}")
    out = x.transpose(0, 1, 4, 2, 3).reshape(b, n * f, m, nn_)
    if config.extra_channels:
        if target_times is None:
            raise ValueError("calendar channels need target timestamps")
        out = np.concatenate([out, calendar_planes(target_times, config.extra_channels, (m, nn_))],
                             axis=1)
    return out


def d_input(x: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """History RTLMP planes plus a candidate next frame ``(B, 1, M, N)``."""
    return np.concatenate([x[..., 0], frame], axis=1)


def _stack(samples: Sequence[Sample], idx):
    x = np.stack([samples[i].x for i in idx])
    y = np.stack([samples[i].y[..., 0] for i in idx])[:, None]
    t = np.array([samples[i].target_time for i in idx], dtype="datetime64[h]")
    return x, y, t


# ---------------------------------------------------------------------------
# training


class BatchStream:
    """Uniform sampling without replacement, reshuffled every epoch.

    Batch ``k`` of the stream is a pure function of ``(seed, k)``, which is
    what lets a resumed run pick up exactly where it stopped.
    """

    def __init__(self, n_samples: int, batch_size: int, seed: int):
        if n_samples < batch_size:
            raise TrainingError(f"need at least {batch_size} samples, got {n_samples}")
        self.n = n_samples
        self.m = batch_size
        self.seed = seed
        self.per_epoch = n_samples // batch_size
        self._epoch = -1
        self._perm = None

    def batch(self, k: int) -> np.ndarray:
        epoch, j = divmod(k, self.per_epoch)
        if epoch != self._epoch:
            self._perm = np.random.default_rng([self.seed, epoch]).permutation(self.n)
            self._epoch = epoch
        return self._perm[j * self.m : (j + 1) * self.m]


def _check_finite(iteration, values: dict, limit):
    for name, v in values.items():
        if not math.isfinite(v) or abs(v) > limit:
            raise DivergenceError(f"iteration {iteration}: {name} = {v!r} exceeds divergence guard {limit:g}")


def discriminator_step(model: GanModel, x, y, t, rng) -> float:
    cfg = model.config
    G, D = model.generator, model.discriminator
    fake, _ = nn.forward(G, g_input(x, cfg, t), "train", rng)
    d_real, c_real = nn.forward(D, d_input(x, y), "train", rng)
    d_fake, c_fake = nn.forward(D, d_input(x, fake), "train", rng)
    loss = losses.loss_d(d_real, d_fake)
    g_real, _ = nn.backward(D, c_real, losses.bce_grad(d_real, 1.0))
    g_fake, _ = nn.backward(D, c_fake, losses.bce_grad(d_fake, 0.0))
    nn.update_running_stats(D, c_real)
    nn.update_running_stats(D, c_fake)
    nn.sgd_step(D, nn.add_grads(g_real, g_fake), cfg.lr_d)
    return loss


def generator_step(model: GanModel, x, y, t, rng) -> dict:
    cfg = model.config
    G, D = model.generator, model.discriminator
    fake, g_cache = nn.forward(G, g_input(x, cfg, t), "train", rng)
    x_last = x[:, -1, :, :, 0][:, None]
    parts = {
        "lp": losses.loss_lp(fake, y, cfg.p),
        "gdl": losses.loss_gdl(fake, y, cfg.alpha),
        "dcl": losses.loss_dcl(fake, y, x_last),
    }
    dfake = cfg.lambda_lp * losses.loss_lp_grad(fake, y, cfg.p)
    dfake += cfg.lambda_gdl * losses.loss_gdl_grad(fake, y, cfg.alpha)
    dfake += cfg.lambda_dcl * losses.loss_dcl_grad(fake, y, x_last)
    d_fake, d_cache = nn.forward(D, d_input(x, fake), "train", rng)
    parts["adv"] = float(np.sum(losses.bce(d_fake, 1.0)))
    if cfg.lambda_adv:
        _, dx = nn.backward(D, d_cache, losses.bce_grad(d_fake, 1.0))
        dfake += cfg.lambda_adv * dx[:, -1:]
    grads, _ = nn.backward(G, g_cache, dfake)
    nn.update_running_stats(G, g_cache)
    nn.sgd_step(G, grads, cfg.lr_g)
    parts["loss_G"] = losses.weighted_g(parts["adv"], parts["lp"], parts["gdl"], parts["dcl"], cfg)
    return parts


def validation_l2(model: GanModel, samples: Sequence[Sample]) -> float:
    """Mean per-sample squared error of inference-mode predictions."""
    total = 0.0
    for lo in range(0, len(samples), PREDICT_CHUNK):
        x, y, t = _stack(samples, range(lo, min(lo + PREDICT_CHUNK, len(samples))))
        yhat, _ = nn.forward(model.generator, g_input(x, model.config, t), "infer")
        total += losses.loss_lp(yhat, y, 2)
    return total / len(samples)


def _should_stop(history, iteration, cfg) -> bool:
    if not history or iteration < cfg.patience:
        return False
    old = [v for i, v in history if i <= iteration - cfg.patience]
    if not old:
        return False
    recent = [v for i, v in history if i > iteration - cfg.patience]
    return min(recent) > min(old) * (1.0 - cfg.min_improvement)


def train(samples: Sequence[Sample], config: GanConfig, val_samples: Sequence[Sample] | None = None,
          *, model: GanModel | None = None, checkpoint_path=None, log_path=None,
          features=(), stats=None, progress=None) -> tuple[GanModel, list[dict]]:
    """Alternate one discriminator and one generator SGD step per iteration.

    Each iteration draws two consecutive batches from the epoch stream: the
    first for the discriminator, a fresh one for the generator.  Passing a
    ``model`` loaded from a checkpoint resumes at ``model.iteration + 1``.
    Returns the model and the log rows of the iterations run by this call.
    """
    if not samples:
        raise TrainingError("no training samples")
    x0 = samples[0].x
    for s in samples:
        if s.x.shape != x0.shape:
            raise TrainingError("inconsistent sample shapes")
    if model is None:
        model = build_model(x0.shape[-1], config, x0.shape[1:3], stats, features)
    cfg = model.config
    stream = BatchStream(len(samples), cfg.batch_size, cfg.seed)
    log_rows: list[dict] = []
    log_fh = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = model.iteration == 0 or not log_path.exists()
        if not fresh:
            _truncate_log(log_path, model.iteration)
        log_fh = log_path.open("w" if fresh else "a", newline="")
        writer = csv.writer(log_fh, lineterminator="\n")
        if fresh:
            writer.writerow(LOG_COLUMNS)
    try:
        start = model.iteration + 1
        for it in range(start, cfg.max_iterations + 1):
            rng = np.random.default_rng([cfg.seed, it])
            xd, yd, td = _stack(samples, stream.batch(2 * (it - 1)))
            ld = discriminator_step(model, xd, yd, td, rng) / cfg.batch_size
            xg, yg, tg = _stack(samples, stream.batch(2 * (it - 1) + 1))
            parts = generator_step(model, xg, yg, tg, rng)
            row = {"iteration": it, "loss_D": ld}
            row.update({k: parts[k] / cfg.batch_size for k in ("loss_G", "adv", "lp", "gdl", "dcl")})
            _check_finite(it, {k: row[k] for k in LOG_COLUMNS[1:7]}, cfg.divergence_limit)
            model.iteration = it
            stop = False
            at_eval = cfg.eval_every and it % cfg.eval_every == 0
            if at_eval and val_samples:
                row["val_l2"] = validation_l2(model, val_samples)
                model.val_history.append((it, row["val_l2"]))
                stop = _should_stop(model.val_history, it, cfg)
            log_rows.append(row)
            if log_fh is not None:
                writer.writerow(_format_row(row))
            if progress is not None:
                progress(row)
            if checkpoint_path is not None and at_eval:
                log_fh and log_fh.flush()
                model.save(checkpoint_path)
            if stop:
                logger.info("early stop at iteration %d", it)
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_path is not None:
        model.save(checkpoint_path)
    return model, log_rows


def _format_row(row):
    return [row["iteration"]] + [
        ("" if row.get(k) is None else repr(float(row[k]))) for k in LOG_COLUMNS[1:]
    ]


def _truncate_log(path: Path, iteration: int) -> None:
    """Drop log rows past ``iteration`` so a resumed run does not duplicate them."""
    lines = path.read_text().splitlines(keepends=True)
    keep = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= iteration]
    path.write_text("".join(keep))


def read_log(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "iteration" else (float(v) if v else None))
                         for k, v in r.items()})
        return rows


# ---------------------------------------------------------------------------
# prediction


def predict_next(model: GanModel, x: np.ndarray, target_time=None) -> np.ndarray:
    """Next RTLMP frame ``(M, N, 1)`` from ``n`` normalized history frames ``(n, M, N, F)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise nn.ShapeError(f"expected (n, M, N, F) history, got {x.shape}")
    times = None if target_time is None else [target_time]
    yhat, _ = nn.forward(model.generator, g_input(x[None], model.config, times), "infer")
    return yhat[0, 0][..., None]


def predict_series(model: GanModel, video: MarketVideo, start, end):
    """Teacher-forced predictions for every hour in ``[start, end)``.

    Returns ``(timestamps, frames)`` with frames of shape ``(H, M, N)``; the
    prediction for hour ``t`` only reads frames ``t-n .. t-1``.
    """
    n = model.config.n
    i0, i1 = video.index_of(start), None
    end = np.datetime64(end, "h")
    i1 = i0 + int((end - np.datetime64(start, "h")) / HOUR)
    if i0 < n:
        raise MarketDataError(f"need {n} hours of history before {start}")
    if i1 > len(video) or i1 <= i0:
        raise MarketDataError(f"span {start}..{end} not covered by video")
    v = video.values
    times = video.timestamps[i0:i1]
    out = np.empty((i1 - i0,) + video.layout.shape)
    for lo in range(i0, i1, PREDICT_CHUNK):
        hi = min(lo + PREDICT_CHUNK, i1)
        x = np.stack([v[t - n : t] for t in range(lo, hi)])
        yhat, _ = nn.forward(model.generator, g_input(x, model.config, video.timestamps[lo:hi]), "infer")
        out[lo - i0 : hi - i0] = yhat[:, 0]
    return times, out
