"""End-to-end synthetic harness: synth -> ingest -> train -> predict -> calibrate -> evaluate.

9 zones, 90 days of training, 14 days held out.  Prints the scores that the
acceptance suite checks and returns them as a dict from :func:`run_harness`.

    python scripts/run_harness.py --workdir /tmp/harness
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import time
from pathlib import Path


from lmpgan import cli, evaluation
from lmpgan.config import EXAMPLE_CONFIG, load_config

TRAIN_DAYS, TEST_DAYS = 90, 14
BIAS = -5.0

HARNESS_SETTINGS = {
    "data.train_end": "2017-04-01T00:00:00Z",  # 2017-01-01 + 90 days
    "gan.max_iterations": "5000",
    "gan.eval_every": "250",
    "gan.width": "0.5",
    "gan.extra_channels": "2",
}


def _cli(config, *args, overrides=()):
    argv = ["--config", str(config)]
    for k, v in overrides:
        argv += ["--set", f"{k}={v}"]
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        rc = cli.main(argv + list(args))
    if rc != 0:
        raise RuntimeError(f"lmpgan {' '.join(args)} exited {rc}:\n{buf.getvalue()}")
    return buf.getvalue()


def _column(path, key, zones):
    with Path(path).open(newline="") as fh:
        return cli._by_zone(list(csv.DictReader(fh)), key, zones)[1]


def run_harness(workdir, seed: int = 0, settings: dict | None = None, verbose: bool = True) -> dict:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    config = workdir / "harness.ini"
    config.write_text(EXAMPLE_CONFIG)
    ov = list({**HARNESS_SETTINGS, **(settings or {}), "run.seed": str(seed)}.items())
    t0 = time.perf_counter()

    hours = 24 * (TRAIN_DAYS + TEST_DAYS)
    _cli(config, "synth", "--hours", str(hours), overrides=ov)
    _cli(config, "ingest", overrides=ov)
    _cli(config, "train", overrides=ov)
    _cli(config, "predict", overrides=ov)
    _cli(config, "calibrate", overrides=ov)
    table = _cli(config, "evaluate", "--heatmaps", overrides=ov)

    cfg = load_config(config, [f"{k}={v}" for k, v in ov])
    zones = cfg.layout.zone_order
    y_true = _column(cfg.predictions_path, "y_true", zones)
    y_gan = _column(cfg.predictions_path, "y_gan", zones)
    y_cal = _column(cfg.calibration_path, "y_calibrated", zones)
    with cfg.scores_path.open(newline="") as fh:
        scores = {(r["scope"], r["metric"]): r["value"] for r in csv.DictReader(fh)}

    # biased residuals: same model, every prediction shifted by BIAS before calibration
    biased_dir = workdir / "biased"
    ov_b = ov + [("paths.workdir", str(biased_dir))]
    biased_dir.mkdir(exist_ok=True)
    for name in ("norm_stats.csv", "model.ckpt", "predictions.csv"):
        (biased_dir / name).write_bytes((cfg.workdir / name).read_bytes())
    _cli(config, "calibrate", "--bias", str(BIAS), overrides=ov_b)
    y_bcal = _column(biased_dir / "calibration.csv", "y_calibrated", zones)

    corr_true = evaluation.spatial_correlation_matrix(y_true)
    shuffled = evaluation.shuffled_control(y_gan, seed)
    result = {
        "mape_gan": evaluation.mape(y_true, y_gan).mape,
        "mape_persistence_1h": float(scores[("all", "persistence_1h_mape_pct")]),
        "mape_persistence_24h": float(scores[("all", "persistence_24h_mape_pct")]),
        "mape_biased": evaluation.mape(y_true, y_gan + BIAS).mape,
        "mape_calibrated": evaluation.mape(y_true, y_cal).mape,
        "mape_biased_calibrated": evaluation.mape(y_true, y_bcal).mape,
        "corr_distance": evaluation.correlation_distance(
            evaluation.spatial_correlation_matrix(y_gan), corr_true),
        "corr_distance_shuffled": evaluation.correlation_distance(
            evaluation.spatial_correlation_matrix(shuffled), corr_true),
        "spike_recall": scores[("all", "spike_recall")],
        "test_hours": int(y_true.shape[0]),
        "seconds": time.perf_counter() - t0,
    }
    if verbose:
        print(table)
        print(json.dumps(result, indent=2))
    return result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="harness_run")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args()
    settings = dict(s.split("=", 1) for s in args.set)
    run_harness(args.workdir, args.seed, settings)


if __name__ == "__main__":
    main()
