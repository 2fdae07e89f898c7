import numpy as np
import pytest

from lmpgan.market_data import GridLayout, MarketVideo, default_layout, synth_market


def make_video(values, features=("rtlmp", "dalmp", "demand"), start="2017-01-01T00", layout=None):
    values = np.asarray(values, dtype=np.float64)
    T, M, N, _ = values.shape
    layout = layout or GridLayout(M, N, tuple(f"Z{k + 1}" for k in range(M * N)))
    times = np.datetime64(start, "h") + np.arange(T) * np.timedelta64(1, "h")
    return MarketVideo(times, values, layout, tuple(features))


@pytest.fixture(scope="session")
def synth_video():
    return synth_market(0, default_layout(), 24 * 30)


def write_rows(path, rows, header="timestamp,zone,rtlmp,dalmp,demand"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path
