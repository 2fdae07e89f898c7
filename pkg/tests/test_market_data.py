import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_video, write_rows
from lmpgan.market_data import (
    DataWarning,
    DegenerateStatsError,
    GridLayout,
    MarketDataError,
    NormStats,
    default_layout,
    denormalize,
    feature_correlation,
    fit_all_stats,
    fit_norm_stats,
    format_timestamp,
    ingest_csv,
    load_stats,
    make_video as normalize_video,
    normalize,
    parse_timestamp,
    save_stats,
    screen_features,
    synth_market,
    window,
    write_csv,
)

S = NormStats("rtlmp", 10.0, 21.0)


def series_video(vals):
    return make_video(np.asarray(vals, float).reshape(-1, 1, 1, 1), features=("rtlmp",))


# --- layout -----------------------------------------------------------------

def test_layout_validation():
    with pytest.raises(MarketDataError):
        GridLayout(2, 2, ("a", "b", "c"))
    with pytest.raises(MarketDataError):
        GridLayout(1, 2, ("a", "a"))
    lay = default_layout()
    assert lay.cell("Z1") == (0, 0) and lay.cell("Z6") == (1, 2)
    assert len(lay.neighbors()) == 12  # 3x3 grid: 6 horizontal + 6 vertical


# --- ingestion --------------------------------------------------------------

def two_zone_rows(hours, skip=()):
    rows = []
    for h in range(hours):
        for z in ("A", "B"):
            if (h, z) in skip:
                continue
            rows.append(f"2017-08-21T{h:02d}:00:00Z,{z},{20 + h},{19 + h},{1000 + h}")
    return rows


LAY2 = GridLayout(1, 2, ("A", "B"))
FEATS = ("rtlmp", "dalmp", "demand")


def test_ingest_complete(tmp_path):
    p = write_rows(tmp_path / "d.csv", two_zone_rows(3))
    v = ingest_csv(p, LAY2, FEATS)
    assert len(v) == 3 and v.values.shape == (3, 1, 2, 3)
    assert v.values[2, 0, 1, 0] == 22.0
    assert format_timestamp(v.timestamps[0]) == "2017-08-21T00:00:00Z"


def test_ingest_forward_fill_warns(tmp_path):
    p = write_rows(tmp_path / "d.csv", two_zone_rows(4, skip={(2, "B")}))
    with pytest.warns(DataWarning, match="forward-filled"):
        v = ingest_csv(p, LAY2, FEATS)
    assert v.values[2, 0, 1, 0] == v.values[1, 0, 1, 0] == 21.0


def test_ingest_rejects_seven_hour_gap(tmp_path):
    skip = {(h, "A") for h in range(2, 9)}
    p = write_rows(tmp_path / "d.csv", two_zone_rows(12, skip=skip))
    with pytest.raises(MarketDataError, match="7 consecutive missing hours 2017-08-21T02"):
        ingest_csv(p, LAY2, FEATS)
    # six is still fillable
    skip = {(h, "A") for h in range(2, 8)}
    p = write_rows(tmp_path / "e.csv", two_zone_rows(12, skip=skip))
    with pytest.warns(DataWarning):
        ingest_csv(p, LAY2, FEATS)


@pytest.mark.parametrize("bad,msg", [
    ("2017-08-21T03:00:00Z,C,1,2,3", "unknown zone_id"),
    ("2017-08-21T03:30:00Z,A,1,2,3", "bad timestamp"),
    ("2017-08-21T03:00:00Z,A,1,2", "expected 5 fields"),
    ("2017-08-21T03:00:00Z,A,x,2,3", "could not convert"),
    ("2017-08-21T00:00:00Z,A,1,2,3", "duplicate"),
])
def test_ingest_errors_carry_line(tmp_path, bad, msg):
    p = write_rows(tmp_path / "d.csv", two_zone_rows(3) + [bad])
    with pytest.raises(MarketDataError, match=msg) as info:
        ingest_csv(p, LAY2, FEATS)
    assert ":8:" in str(info.value)


def test_ingest_schema(tmp_path):
    p = write_rows(tmp_path / "d.csv", two_zone_rows(2), header="timestamp,zone,rtlmp,dalmp")
    with pytest.raises(MarketDataError, match="missing feature"):
        ingest_csv(p, LAY2, FEATS)
    with pytest.raises(MarketDataError, match="start with"):
        ingest_csv(p, LAY2, ("dalmp",))


def test_csv_round_trip(tmp_path):
    v = synth_market(3, default_layout(), 48)
    write_csv(v, tmp_path / "s.csv")
    back = ingest_csv(tmp_path / "s.csv", default_layout(), v.features)
    np.testing.assert_allclose(back.values, v.values, atol=5e-7)
    assert np.array_equal(back.timestamps, v.timestamps)


def test_timestamp_parsing():
    assert parse_timestamp("2017-08-21T13:00:00Z") == np.datetime64("2017-08-21T13", "h")
    assert parse_timestamp("2017-08-21T13:00:00+00:00") == np.datetime64("2017-08-21T13", "h")
    with pytest.raises(ValueError):
        parse_timestamp("2017-08-21T13:00:01Z")


def test_video_invariants():
    vals = np.zeros((3, 1, 1, 1))
    times = np.array(["2017-01-01T00", "2017-01-01T02", "2017-01-01T03"], dtype="datetime64[h]")
    from lmpgan.market_data import MarketVideo
    with pytest.raises(MarketDataError):
        MarketVideo(times, vals, GridLayout(1, 1, ("a",)), ("rtlmp",))
    with pytest.raises(MarketDataError):
        make_video(np.zeros((2, 1, 1, 1)), features=("dalmp",))


# --- normalization ----------------------------------------------------------

def test_fit_stats_examples():
    assert fit_norm_stats(series_video([10, 20, 30]), "rtlmp") == NormStats("rtlmp", 10, 21)
    assert fit_norm_stats(series_video([-50, 0, 100]), "rtlmp") == NormStats("rtlmp", -50, 151)
    s = fit_norm_stats(series_video([5, 5, 5]), "rtlmp")
    assert (s.min_c, s.max_cplus, s.degenerate) == (5, 1, True)


def test_normalize_examples():
    assert normalize(10, S) == -1.0
    assert normalize(30, S) == pytest.approx(1.0, abs=1e-15)
    expected = (math.log(11) - math.log(21) / 2) / (math.log(21) / 2)
    assert normalize(20, S) == pytest.approx(expected, abs=1e-15)
    assert normalize(20, S) == pytest.approx(0.5753, abs=1e-4)


def test_denormalize_examples():
    assert denormalize(-1.0, S) == pytest.approx(10.0, abs=1e-12)
    assert denormalize(normalize(20, S), S) == pytest.approx(20.0, abs=1e-9)
    assert denormalize(0.5753, S) == pytest.approx(20.0, abs=0.01)


def test_degenerate_channel():
    with pytest.raises(DegenerateStatsError, match="constant"):
        normalize(5, NormStats("x", 5, 1))
    raw = make_video(np.full((4, 1, 1, 2), 5.0) + np.arange(4).reshape(4, 1, 1, 1) * [1, 0],
                     features=("rtlmp", "demand"))
    with pytest.warns(DataWarning, match="constant"):
        v = normalize_video(raw, fit_all_stats(raw))
    assert np.all(v.values[..., 1] == 0.0)
    assert v.values[0, 0, 0, 0] == -1.0 and v.values[-1, 0, 0, 0] == pytest.approx(1.0)


def test_out_of_range_test_values():
    s = fit_norm_stats(series_video([10, 20, 30]), "rtlmp")
    assert -1.0 > normalize(9.5, s) > normalize(9.2, s)  # below min but c+ > 0: kept, not clamped
    with pytest.warns(DataWarning, match="clamped"):
        low = normalize(8.0, s)
    assert low == pytest.approx((math.log(1e-6) - math.log(21) / 2) / (math.log(21) / 2))
    assert normalize(40, s) > 1.0


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 50),
                  elements=st.floats(0.01, 1e4, allow_nan=False)).filter(lambda a: np.ptp(a) > 1e-6))
def test_normalize_properties(vals):
    s = fit_norm_stats(series_video(vals), "rtlmp")
    z = normalize(vals, s)
    assert np.all(z >= -1.0) and np.all(z <= 1.0 + 1e-15)
    assert z.min() == -1.0 and abs(z.max() - 1.0) < 1e-12
    order = np.argsort(vals, kind="stable")
    assert np.all(np.diff(z[order]) >= 0)
    np.testing.assert_allclose(denormalize(z, s), vals, rtol=1e-9)


def test_stats_persistence(tmp_path):
    stats = {"rtlmp": NormStats("rtlmp", 0.1 + 0.2, 1 / 3 + 5), "demand": NormStats("demand", -7.0, 1e4)}
    save_stats(stats, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "feature,min_C,max_Cplus"
    assert load_stats(tmp_path / "s.csv") == stats


def test_training_span_in_range(synth_video):
    train, test = synth_video.split_at(synth_video.timestamps[500])
    stats = fit_all_stats(train)
    norm = normalize_video(train, stats)
    assert norm.values.min() == -1.0 and np.abs(norm.values).max() <= 1.0 + 1e-12
    assert len(test) == len(synth_video) - 500


# --- windows ----------------------------------------------------------------

def test_window_counts():
    v = make_video(np.arange(10 * 2 * 3, dtype=float).reshape(10, 1, 2, 3))
    assert len(window(v, 4)) == 6
    one = window(v.slice(0, 5), 4)
    assert len(one) == 1
    assert np.array_equal(one[0].y, v.values[4, :, :, :1])
    assert one[0].target_time == v.timestamps[4]
    with pytest.raises(MarketDataError):
        window(v.slice(0, 4), 4)


def test_window_targets_tile_video(synth_video):
    s = window(synth_video, 4)
    y = np.stack([x.y for x in s])
    assert np.array_equal(y, synth_video.values[4:, :, :, :1])
    assert all(np.array_equal(x.x, synth_video.values[i : i + 4]) for i, x in enumerate(s[:50]))


# --- correlation screening --------------------------------------------------

def test_feature_correlation_examples():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(50, 1, 2))
    vals = np.stack([a, a, -a, 3 * a + 7], axis=-1)
    v = make_video(vals, features=("rtlmp", "same", "neg", "affine"))
    assert feature_correlation(v, "same") == pytest.approx(1.0)
    assert feature_correlation(v, "neg") == pytest.approx(-1.0)
    assert feature_correlation(v, "affine") == pytest.approx(1.0)
    assert feature_correlation(v, "rtlmp", "neg") == pytest.approx(feature_correlation(v, "neg"))
    ranked = screen_features(v)
    assert {f for f, _ in ranked} >= {"same", "neg", "affine"}


def test_feature_correlation_zero_variance():
    v = make_video(np.stack([np.arange(5.0), np.ones(5)], -1).reshape(5, 1, 1, 2),
                   features=("rtlmp", "flat"))
    with pytest.raises(MarketDataError):
        feature_correlation(v, "flat")


# --- synthetic market -------------------------------------------------------

def test_synth_deterministic():
    a = synth_market(7, default_layout(), 200)
    b = synth_market(7, default_layout(), 200)
    assert a.values.tobytes() == b.values.tobytes()
    assert synth_market(8, default_layout(), 200).values.tobytes() != a.values.tobytes()


def test_synth_no_spikes_ratio():
    v = synth_market(1, default_layout(), 24 * 60, spike_rate=0.0)
    rt = v.zone_series()
    assert (rt.max(axis=0) / np.median(rt, axis=0)).max() < 3


def test_synth_spatial_correlation():
    v = synth_market(2, default_layout(), 24 * 60)
    rt = v.zone_series()
    c = np.corrcoef(rt.T)
    neigh = np.mean([c[a, b] for a, b in v.layout.neighbors()])
    assert neigh >= 0.5
    rng = np.random.default_rng(0)
    shuffled = np.column_stack([rt[rng.permutation(len(rt)), k] for k in range(rt.shape[1])])
    cs = np.corrcoef(shuffled.T)
    assert neigh > np.mean([cs[a, b] for a, b in v.layout.neighbors()]) + 0.3


def test_synth_features_and_daily_cycle():
    v = synth_market(0, default_layout(), 24 * 28, spike_rate=0.0)
    rt, dem = v.zone_series(), v.zone_series("demand")
    assert feature_correlation(v, "demand") > 0.5
    assert feature_correlation(v, "dalmp") > 0.5
    by_hour = rt.mean(axis=1).reshape(-1, 24).mean(axis=0)
    assert by_hour.max() - by_hour.min() > 10
    assert dem.min() > 0
