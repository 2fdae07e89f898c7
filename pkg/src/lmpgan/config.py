"""Run configuration: one INI-style key/value file, overridable from the CLI."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .gan.config import GanConfig
from .market_data import RTLMP, GridLayout, MarketDataError, default_layout, parse_timestamp


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationSettings:
    window: int = 168
    refit_every: int = 24
    p_max: int = 3
    q_max: int = 3


@dataclass(frozen=True)
class EvaluationSettings:
    eps_den: float = 0.01
    spike_multiplier: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    data: Path = Path("data.csv")
    workdir: Path = Path("run")
    layout: GridLayout = field(default_factory=default_layout)
    features: tuple[str, ...] = ("rtlmp", "dalmp", "demand")
    train_end: np.datetime64 | None = None
    test_end: np.datetime64 | None = None
    val_hours: int = 168
    gan: GanConfig = field(default_factory=GanConfig)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    seed: int = 0

    # artifact locations
    @property
    def stats_path(self):
        return self.workdir / "norm_stats.csv"

    @property
    def dataset_path(self):
        return self.workdir / "dataset_normalized.csv"

    @property
    def checkpoint_path(self):
        return self.workdir / "model.ckpt"

    @property
    def log_path(self):
        return self.workdir / "train_log.csv"

    @property
    def predictions_path(self):
        return self.workdir / "predictions.csv"

    @property
    def calibration_path(self):
        return self.workdir / "calibration.csv"

    @property
    def scores_path(self):
        return self.workdir / "scores.csv"


def _coerce(cls, section: dict, name: str):
    kinds = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in kinds:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        default = getattr(cls(), key)
        try:
            if isinstance(default, bool):
                out[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            else:
                out[key] = raw.strip()
        except ValueError:
            raise ConfigError(f"[{name}] {key} = {raw!r} is not a valid {type(default).__name__}") from None
    return out


def parse_config(text: str, base_dir: Path = Path("."), overrides=()) -> RunConfig:
    """Build a validated :class:`RunConfig` from INI text plus ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, opt = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, opt, value)

    known = {"paths", "grid", "data", "gan", "calibration", "evaluation", "run"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    sec = {s: dict(cp.items(s)) for s in cp.sections()}

    kw = {}
    paths = sec.get("paths", {})
    for key in paths:
        if key not in ("data", "workdir"):
            raise ConfigError(f"[paths] unknown key {key!r}")
    if "data" in paths:
        kw["data"] = (base_dir / paths["data"]).resolve()
    if "workdir" in paths:
        kw["workdir"] = (base_dir / paths["workdir"]).resolve()

    grid = sec.get("grid", {})
    try:
        rows = int(grid.get("rows", 3))
        cols = int(grid.get("cols", 3))
        zones = grid.get("zones")
        zone_order = ([z.strip() for z in zones.split(",") if z.strip()] if zones
                      else list(default_layout(rows, cols).zone_order))
        kw["layout"] = GridLayout(rows, cols, tuple(zone_order))
    except (ValueError, MarketDataError) as exc:
        raise ConfigError(f"[grid] {exc}") from None

    data = dict(sec.get("data", {}))
    if "features" in data:
        feats = tuple(f.strip() for f in data.pop("features").split(",") if f.strip())
        if not feats or feats[0] != RTLMP:
            raise ConfigError(f"[data] features must start with {RTLMP!r}")
        kw["features"] = feats
    for key in ("train_end", "test_end"):
        if key in data:
            try:
                kw[key] = parse_timestamp(data.pop(key))
            except ValueError as exc:
                raise ConfigError(f"[data] {key}: {exc}") from None
    if "val_hours" in data:
        kw["val_hours"] = int(data.pop("val_hours"))
    if data:
        raise ConfigError(f"[data] unknown keys {sorted(data)}")

    seed = int(sec.get("run", {}).get("seed", 0))
    kw["seed"] = seed
    try:
        gan_kw = _coerce(GanConfig, sec.get("gan", {}), "gan")
        gan_kw.setdefault("seed", seed)
        kw["gan"] = GanConfig(**gan_kw)
        kw["calibration"] = CalibrationSettings(**_coerce(CalibrationSettings, sec.get("calibration", {}),
                                                          "calibration"))
        kw["evaluation"] = EvaluationSettings(**_coerce(EvaluationSettings, sec.get("evaluation", {}),
                                                        "evaluation"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**kw)


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent, overrides)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed, gan=replace(cfg.gan, seed=seed))


EXAMPLE_CONFIG = """\
[paths]
data = data.csv
workdir = run

[grid]
rows = 3
cols = 3
zones = Z1,Z2,Z3,Z4,Z5,Z6,Z7,Z8,Z9

[data]
features = rtlmp,dalmp,demand
train_end = 2017-04-01T00:00:00Z
val_hours = 168

[gan]
n = 4
max_iterations = 2000
eval_every = 250

[calibration]
window = 168
refit_every = 24

[evaluation]
eps_den = 0.01
spike_multiplier = 3

[run]
seed = 0
"""
