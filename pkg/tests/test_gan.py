import numpy as np
import pytest

from lmpgan.gan import (
    DivergenceError,
    GanConfig,
    GanModel,
    TrainingError,
    build_model,
    predict_next,
    predict_series,
    read_log,
    train,
)
from lmpgan.gan.trainer import LOG_COLUMNS, BatchStream, _should_stop, calendar_planes, g_input
from lmpgan.market_data import default_layout, fit_all_stats, make_video, synth_market, window
from lmpgan.nn_core.network import flat_params

FAST = dict(width=0.05, eval_every=5, seed=3)


@pytest.fixture(scope="module")
def data():
    raw = synth_market(1, default_layout(), 24 * 6)
    video = make_video(raw, fit_all_stats(raw))
    samples = window(video, 4)
    return video, samples[:100], samples[100:120]


def test_config_validation():
    with pytest.raises(ValueError):
        GanConfig(lambda_adv=-1)
    with pytest.raises(ValueError):
        GanConfig(n=0)
    with pytest.raises(ValueError):
        GanConfig(extra_channels=3)
    cfg = GanConfig(width=0.5, seed=9)
    assert GanConfig.from_dict(cfg.to_dict()) == cfg
    d = GanConfig()
    assert (d.lambda_adv, d.lambda_lp, d.lambda_gdl, d.lambda_dcl) == (0.2, 1, 1, 0.2)
    assert (d.p, d.alpha, d.lr_g, d.lr_d, d.batch_size) == (2, 1, 0.0005, 0.0005, 4)


def test_model_shapes():
    m = build_model(3, GanConfig(width=0.1))
    assert m.generator.spec.input_shape == (12, 3, 3)
    assert m.discriminator.spec.input_shape == (5, 3, 3)
    m14 = build_model(3, GanConfig(width=0.1, extra_channels=2))
    assert m14.generator.spec.input_shape == (14, 3, 3)


def test_calendar_planes():
    t = np.array(["2017-01-02T06", "2017-01-02T18"], dtype="datetime64[h]")  # a Monday
    p = calendar_planes(t, 4, (2, 2))
    assert p.shape == (2, 4, 2, 2)
    np.testing.assert_allclose(p[0, :2, 0, 0], [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(p[1, :2, 1, 1], [-1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(p[0, 2:, 0, 0], [0.0, 1.0], atol=1e-15)  # Monday -> angle 0
    x = np.zeros((2, 4, 3, 3, 3))
    with pytest.raises(ValueError):
        g_input(x, GanConfig(extra_channels=2))


def test_batch_stream_epochs():
    s = BatchStream(10, 3, seed=0)
    epoch0 = np.concatenate([s.batch(k) for k in range(3)])
    assert len(set(epoch0)) == 9
    assert not np.array_equal(s.batch(0), s.batch(3))
    assert np.array_equal(BatchStream(10, 3, 0).batch(4), s.batch(4))
    with pytest.raises(TrainingError):
        BatchStream(2, 4, 0)


def test_training_log_and_determinism(tmp_path, data):
    _, samples, val = data
    cfg = GanConfig(max_iterations=12, **FAST)
    paths = []
    for run in ("a", "b"):
        ck, log = tmp_path / f"{run}.ckpt", tmp_path / f"{run}.csv"
        model, rows = train(samples, cfg, val, checkpoint_path=ck, log_path=log)
        paths.append((ck, log))
    assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
    assert paths[0][1].read_bytes() == paths[1][1].read_bytes()
    logged = read_log(paths[0][1])
    assert tuple(logged[0]) == LOG_COLUMNS and len(logged) == 12
    for r in logged:
        assert all(np.isfinite(r[k]) for k in LOG_COLUMNS[1:7])
    assert [r["val_l2"] is not None for r in logged] == [i % 5 == 0 for i in range(1, 13)]
    assert model.iteration == 12 and [i for i, _ in model.val_history] == [5, 10]


def test_resume_matches_uninterrupted(tmp_path, data):
    _, samples, val = data
    full, _ = train(samples, GanConfig(max_iterations=14, **FAST), val,
                    checkpoint_path=tmp_path / "full.ckpt", log_path=tmp_path / "full.csv")
    train(samples, GanConfig(max_iterations=7, **FAST), val,
          checkpoint_path=tmp_path / "part.ckpt", log_path=tmp_path / "part.csv")
    # a crash after iteration 7 leaves the iteration-5 checkpoint plus extra log rows
    part = GanModel.load(tmp_path / "part.ckpt")
    assert part.iteration == 7
    from dataclasses import replace
    part.config = replace(part.config, max_iterations=14)
    resumed, rows = train(samples, part.config, val, model=part,
                          checkpoint_path=tmp_path / "part.ckpt", log_path=tmp_path / "part.csv")
    assert rows[0]["iteration"] == 8
    assert flat_params(resumed.generator).tobytes() == flat_params(full.generator).tobytes()
    assert (tmp_path / "part.csv").read_bytes() == (tmp_path / "full.csv").read_bytes()
    assert (tmp_path / "part.ckpt").read_bytes() == (tmp_path / "full.ckpt").read_bytes()


def test_seed_changes_run(data):
    _, samples, _ = data
    a, _ = train(samples, GanConfig(max_iterations=3, width=0.05, seed=1))
    b, _ = train(samples, GanConfig(max_iterations=3, width=0.05, seed=2))
    assert flat_params(a.generator).tobytes() != flat_params(b.generator).tobytes()


def test_supervised_mode_ignores_discriminator(data):
    _, samples, _ = data
    cfg = GanConfig(max_iterations=4, width=0.05, lambda_adv=0, lambda_dcl=0)
    a, _ = train(samples, cfg)
    other = build_model(3, cfg)
    rng = np.random.default_rng(0)
    for p in other.discriminator.params:
        for v in p.values():
            v += rng.normal(0, 0.5, v.shape)
    b, _ = train(samples, cfg, model=other)
    assert flat_params(a.generator).tobytes() == flat_params(b.generator).tobytes()
    assert flat_params(a.discriminator).tobytes() != flat_params(b.discriminator).tobytes()


def test_divergence_guard(data):
    _, samples, _ = data
    with pytest.raises(DivergenceError, match="iteration 1"):
        train(samples, GanConfig(max_iterations=3, width=0.05, divergence_limit=1e-3))


def test_insufficient_samples(data):
    _, samples, _ = data
    with pytest.raises(TrainingError):
        train(samples[:3], GanConfig(width=0.05))
    with pytest.raises(TrainingError):
        train([], GanConfig(width=0.05))


def test_early_stop_rule():
    cfg = GanConfig(patience=100, min_improvement=0.001)
    hist = [(50, 1.0), (100, 0.5)]
    assert not _should_stop(hist, 100, cfg)
    assert _should_stop(hist + [(150, 0.4999), (200, 0.4996)], 200, cfg)
    assert not _should_stop(hist + [(150, 0.4999), (200, 0.49)], 200, cfg)


def test_early_stop_in_training(data):
    _, samples, val = data
    cfg = GanConfig(max_iterations=200, width=0.05, eval_every=2, patience=4, min_improvement=0.5)
    model, rows = train(samples, cfg, val)
    assert model.iteration < 200 and rows[-1]["val_l2"] is not None


def test_predict_next(data):
    video, samples, _ = data
    model, _ = train(samples, GanConfig(max_iterations=2, width=0.05))
    s = samples[10]
    y1 = predict_next(model, s.x)
    y2 = predict_next(model, s.x)
    assert y1.shape == (3, 3, 1) and y1.tobytes() == y2.tobytes()
    assert np.all(np.abs(y1) < 1)


def test_predict_series_count_and_causality(data):
    video, samples, _ = data
    model, _ = train(samples, GanConfig(max_iterations=2, width=0.05))
    start = video.timestamps[50]
    times, frames = predict_series(model, video, start, start + np.timedelta64(24, "h"))
    assert frames.shape == (24, 3, 3) and times[0] == start and len(times) == 24
    for k, t in enumerate(times[:3]):
        i = video.index_of(t)
        assert np.array_equal(frames[k][..., None], predict_next(model, video.values[i - 4 : i]))
    # scrambling frames at and after hour t must not change the prediction for t
    vals = video.values.copy()
    vals[60:] = np.random.default_rng(0).normal(size=vals[60:].shape)
    from lmpgan.market_data import MarketVideo
    scrambled = MarketVideo(video.timestamps, vals, video.layout, video.features, normalized=True)
    _, f2 = predict_series(model, scrambled, start, start + np.timedelta64(24, "h"))
    assert np.array_equal(f2[:10], frames[:10]) and not np.array_equal(f2[10:], frames[10:])
    from lmpgan.market_data import MarketDataError
    with pytest.raises(MarketDataError):
        predict_series(model, video, video.timestamps[2], video.timestamps[10])


def test_small_overfit(data):
    # reduced version of the acceptance capacity check
    _, samples, _ = data
    cfg = GanConfig(max_iterations=300, width=0.1, eval_every=0)
    _, rows = train(samples[:16], cfg)
    lp = np.array([r["lp"] for r in rows])
    assert lp[-20:].mean() < 0.5 * lp[:10].mean()
