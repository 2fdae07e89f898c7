"""Command-line pipeline: ingest -> train -> predict -> calibrate -> evaluate -> render.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric divergence.
Set ``LMPGAN_LOG`` (DEBUG, INFO, WARNING, ...) to change log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import calibration, evaluation, render
from .config import EXAMPLE_CONFIG, ConfigError, RunConfig, load_config, with_seed
from .gan import DivergenceError, GanModel, TrainingError, predict_series, train
from .market_data import (
    HOUR,
    DataWarning,
    MarketDataError,
    MarketVideo,
    denormalize,
    fit_all_stats,
    format_timestamp,
    ingest_csv,
    load_stats,
    make_video,
    save_stats,
    synth_market,
    window,
    write_csv,
)
from .nn_core.checkpoint import CheckpointError
from .nn_core.layers import ShapeError

logger = logging.getLogger("lmpgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared loading


def _load_raw(cfg: RunConfig) -> MarketVideo:
    if not cfg.data.exists():
        raise MarketDataError(f"input CSV {cfg.data} does not exist")
    return ingest_csv(cfg.data, cfg.layout, cfg.features)


def _train_end(cfg: RunConfig, video: MarketVideo):
    if cfg.train_end is not None:
        return cfg.train_end
    # default hold-out: the final 14 days
    return video.timestamps[-1] + HOUR - 14 * 24 * HOUR


def _load_dataset(cfg: RunConfig):
    """Raw and normalized videos, using the persisted training-span stats."""
    if not cfg.stats_path.exists():
        raise MarketDataError(f"{cfg.stats_path} missing; run `lmpgan ingest` first")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        raw = _load_raw(cfg)
        stats = load_stats(cfg.stats_path)
        norm = make_video(raw, stats)
    end = cfg.test_end
    if end is not None:
        k = raw.index_of(end - HOUR) + 1
        raw, norm = raw.slice(0, k), norm.slice(0, k)
    return raw, norm, stats


def _read_rows(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _by_zone(rows, key, zones):
    times = sorted({r["timestamp"] for r in rows})
    idx = {t: i for i, t in enumerate(times)}
    col = {z: k for k, z in enumerate(zones)}
    out = np.full((len(times), len(zones)), np.nan)
    for r in rows:
        out[idx[r["timestamp"]], col[r["zone"]]] = float(r[key])
    return times, out


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig, args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DataWarning)
        raw = _load_raw(cfg)
    fills = [w for w in caught if issubclass(w.category, DataWarning)]
    for w in fills:
        logger.warning("%s", w.message)
    train_end = _train_end(cfg, raw)
    train_raw, _ = raw.split_at(train_end)
    if len(train_raw) == 0:
        raise MarketDataError(f"training span before {format_timestamp(train_end)} is empty")
    stats = fit_all_stats(train_raw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        norm = make_video(raw, stats)
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    save_stats(stats, cfg.stats_path)
    _write_normalized(norm, cfg.dataset_path)
    print(f"rows: {len(raw) * len(cfg.layout.zone_order)}")
    print(f"frames: {len(raw)}  features: {','.join(raw.features)}")
    print(f"gaps filled: {len(fills)}")
    print(f"span: {format_timestamp(raw.timestamps[0])} .. {format_timestamp(raw.timestamps[-1])}")
    print(f"training span ends: {format_timestamp(train_end)} ({len(train_raw)} frames)")
    print(f"wrote {cfg.stats_path} and {cfg.dataset_path}")
    return EXIT_OK


def _write_normalized(video: MarketVideo, path):
    T = len(video)
    flat = video.values.reshape(T, -1, len(video.features))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "zone", *video.features])
        for t in range(T):
            ts = format_timestamp(video.timestamps[t])
            for k, zone in enumerate(video.layout.zone_order):
                w.writerow([ts, zone, *(f"{v:.17g}" for v in flat[t, k])])


def cmd_synth(cfg: RunConfig, args) -> int:
    video = synth_market(args.seed if args.seed is not None else cfg.seed, cfg.layout, args.hours,
                         args.spike_rate, args.start)
    out = Path(args.out) if args.out else cfg.data
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(video, out)
    print(f"wrote {len(video) * len(cfg.layout.zone_order)} rows to {out}")
    return EXIT_OK


def _samples(cfg: RunConfig, norm: MarketVideo):
    train_end = _train_end(cfg, norm)
    train_video, _ = norm.split_at(train_end)
    samples = window(train_video, cfg.gan.n)
    val = []
    if cfg.val_hours and len(samples) > cfg.val_hours + cfg.gan.batch_size:
        samples, val = samples[: -cfg.val_hours], samples[-cfg.val_hours :]
    return samples, val


def cmd_train(cfg: RunConfig, args) -> int:
    raw, norm, stats = _load_dataset(cfg)
    samples, val = _samples(cfg, norm)
    model = None
    if args.resume and cfg.checkpoint_path.exists():
        model = GanModel.load(cfg.checkpoint_path)
        model.config = replace(model.config, max_iterations=cfg.gan.max_iterations)
        print(f"resuming from iteration {model.iteration}")

    def progress(row):
        if row["iteration"] % max(1, cfg.gan.eval_every or 100) == 0:
            logger.info("iter %d loss_D %.4f loss_G %.4f lp %.4f val_l2 %s", row["iteration"],
                        row["loss_D"], row["loss_G"], row["lp"], row.get("val_l2"))

    model, log = train(samples, cfg.gan, val, model=model, checkpoint_path=cfg.checkpoint_path,
                       log_path=cfg.log_path, features=norm.features, stats=stats, progress=progress)
    print(f"trained to iteration {model.iteration} on {len(samples)} samples "
          f"({len(val)} validation); checkpoint {cfg.checkpoint_path}")
    return EXIT_OK


def _predict_span(cfg, model, raw, norm, start):
    end = norm.timestamps[-1] + HOUR
    times, frames = predict_series(model, norm, start, end)
    stats = model.stats or load_stats(cfg.stats_path)
    pred = denormalize(frames.reshape(len(times), -1), stats["rtlmp"])
    i0 = raw.index_of(start)
    truth = raw.zone_series()[i0 : i0 + len(times)]
    return times, truth, pred


def _write_long(path, header, times, zones, *cols):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, ts in enumerate(times):
            stamp = format_timestamp(ts)
            for k, z in enumerate(zones):
                w.writerow([stamp, z, *(f"{c[t, k]:.10g}" for c in cols)])


def cmd_predict(cfg: RunConfig, args) -> int:
    raw, norm, _ = _load_dataset(cfg)
    model = GanModel.load(cfg.checkpoint_path)
    start = _train_end(cfg, raw)
    times, truth, pred = _predict_span(cfg, model, raw, norm, start)
    _write_long(cfg.predictions_path, ["timestamp", "zone", "y_true", "y_gan"], times,
                cfg.layout.zone_order, truth, pred)
    print(f"wrote {len(times)} hours x {truth.shape[1]} zones to {cfg.predictions_path}")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args) -> int:
    raw, norm, _ = _load_dataset(cfg)
    model = GanModel.load(cfg.checkpoint_path)
    test_start = _train_end(cfg, raw)
    W = cfg.calibration.window
    lead_start = test_start - W * HOUR
    if raw.index_of(test_start) - W < model.config.n:
        raise MarketDataError(f"calibration needs {W + model.config.n} hours before the hold-out span")
    times, truth, pred = _predict_span(cfg, model, raw, norm, lead_start)
    if args.bias:
        pred = pred + args.bias
    res = calibration.calibrate_zones(pred, truth, window=W,
                                      refit_every=cfg.calibration.refit_every,
                                      p_max=cfg.calibration.p_max, q_max=cfg.calibration.q_max)
    sl = slice(W, None)
    _write_long(cfg.calibration_path,
                ["timestamp", "zone", "y_true", "y_gan", "delta_hat", "y_calibrated"],
                times[sl], cfg.layout.zone_order, truth[sl], pred[sl], res.delta[sl],
                res.calibrated[sl])
    print(f"wrote {len(times) - W} calibrated hours to {cfg.calibration_path}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    raw, _, _ = _load_dataset(cfg)
    zones = cfg.layout.zone_order
    if not cfg.predictions_path.exists():
        raise MarketDataError(f"{cfg.predictions_path} missing; run `lmpgan predict` first")
    rows = _read_rows(cfg.predictions_path)
    times, y_true = _by_zone(rows, "y_true", zones)
    _, y_gan = _by_zone(rows, "y_gan", zones)
    i0 = raw.index_of(parse_ts(times[0]))
    history = raw.zone_series()[max(0, i0 - evaluation.SPIKE_LOOKBACK) : i0]
    extra = {}
    if cfg.calibration_path.exists():
        crow = _read_rows(cfg.calibration_path)
        ctimes, y_cal = _by_zone(crow, "y_calibrated", zones)
        if ctimes != times:
            raise MarketDataError("calibration report does not align with predictions")
        extra["calibrated"] = y_cal
    ev = cfg.evaluation
    report = evaluation.score(y_true, y_gan, zones, history, ev.eps_den, ev.spike_multiplier, extra)
    report.write_csv(cfg.scores_path)
    text = report.table()
    (cfg.workdir / "scores.txt").write_text(text + "\n")
    print(text)
    if args.heatmaps:
        render.write_ppm(cfg.workdir / "corr_pred.ppm", report.corr_pred)
        render.write_ppm(cfg.workdir / "corr_true.ppm", report.corr_true)
    return EXIT_OK


def parse_ts(s):
    from .market_data import parse_timestamp

    return parse_timestamp(s)


def cmd_render(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    if args.correlation:
        rows = _read_rows(cfg.predictions_path)
        key = {"pred": "y_gan", "true": "y_true"}[args.correlation]
        _, series = _by_zone(rows, key, cfg.layout.zone_order)
        render.write_ppm(out, evaluation.spatial_correlation_matrix(series))
    else:
        _, norm, _ = _load_dataset(cfg)
        t = norm.index_of(parse_ts(args.time)) if args.time else len(norm) - 1
        if not args.rgb and args.channel not in norm.features:
            raise UsageError(f"unknown channel {args.channel!r}; have {', '.join(norm.features)}")
        channel = None if args.rgb else norm.features.index(args.channel)
        render.write_ppm(out, render.frame_image(norm.values[t], channel))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_init(cfg_path: Path) -> int:
    if cfg_path.exists():
        raise UsageError(f"{cfg_path} already exists")
    cfg_path.write_text(EXAMPLE_CONFIG)
    print(f"wrote {cfg_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lmpgan", description=__doc__.splitlines()[0])
    p.add_argument("-c", "--config", default="lmpgan.ini", help="run config file (INI)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; repeatable")
    p.add_argument("--seed", type=int, help="override [run] seed (also seeds the GAN)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("init", help="write an example config")
    sub.add_parser("ingest", help="normalize the input CSV and persist stats")
    s = sub.add_parser("synth", help="write a synthetic market CSV")
    s.add_argument("--hours", type=int, default=24 * 104)
    s.add_argument("--spike-rate", type=float, default=0.01)
    s.add_argument("--start", default="2017-01-01T00")
    s.add_argument("--out", help="output CSV (default: [paths] data)")
    t = sub.add_parser("train", help="adversarial training")
    t.add_argument("--resume", action="store_true", help="continue from the workdir checkpoint")
    sub.add_parser("predict", help="hour-by-hour predictions over the hold-out span")
    c = sub.add_parser("calibrate", help="ARMA-calibrate hold-out predictions")
    c.add_argument("--bias", type=float, default=0.0, help="add a constant to predictions first ($/MWh)")
    e = sub.add_parser("evaluate", help="score predictions")
    e.add_argument("--heatmaps", action="store_true", help="also write correlation heatmaps (PPM)")
    r = sub.add_parser("render", help="render a frame or correlation matrix as PPM")
    r.add_argument("--out", required=True)
    r.add_argument("--time", help="frame timestamp (default: last)")
    r.add_argument("--channel", default="rtlmp")
    r.add_argument("--rgb", action="store_true", help="render channels 0-2 as RGB")
    r.add_argument("--correlation", choices=("pred", "true"))
    return p


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LMPGAN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command == "init":
            return cmd_init(Path(args.config))
        cfg = load_config(args.config, args.set)
        if args.seed is not None:
            cfg = with_seed(cfg, args.seed)
        if args.command == "synth":
            args.seed = args.seed if args.seed is not None else cfg.seed
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MarketDataError, CheckpointError, TrainingError, calibration.CalibrationError,
            evaluation.EvaluationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
