import os

import numpy as np
import pytest

from mtlinear import SeriesFrame

DATA_ENV = "MTLINEAR_DATA_DIR"


def dataset_path(*names):
    """First existing benchmark CSV among candidate names, or None."""
    bases = [os.environ.get(DATA_ENV), os.path.join(os.path.dirname(__file__), "data")]
    for base in bases:
        if not base:
            continue
        for name in names:
            path = os.path.join(base, name)
            if os.path.isfile(path):
                return path
    return None


def require_dataset(*names):
    path = dataset_path(*names)
    if path is None:
        pytest.skip(f"benchmark file {names[0]} not available; put the public CSVs "
                    f"in $MTLINEAR_DATA_DIR or tests/data (see README)")
    return path


def make_frame(values, train_end=None, val_end=None, test_end=None, names=None):
    values = np.asarray(values, dtype=np.float64)
    T, k = values.shape
    train_end = train_end if train_end is not None else int(T * 0.7)
    val_end = val_end if val_end is not None else train_end + int(T * 0.15)
    test_end = test_end if test_end is not None else T
    names = tuple(names) if names else tuple(f"v{i}" for i in range(k))
    return SeriesFrame(values=values, variate_names=names, timestamps=(),
                       train_end=train_end, val_end=val_end, test_end=test_end)


def sinusoid_series(T, k, n_freq, seed, amplitude=1.0):
    """Mixtures of distinct sinusoids: every length-2*n_freq lookback maps to
    the future exactly linearly (each variate satisfies an order-2*n_freq
    linear recurrence), and window designs are full rank. The basis of the
    planted-linear-map tests."""
    rng = np.random.default_rng(seed)
    t = np.arange(T)[:, None, None]
    # well-separated frequencies keep the window design well conditioned
    grid = np.linspace(0.3, 2.7, n_freq)
    freqs = grid[None, None, :] + rng.uniform(-0.08, 0.08, size=(1, k, n_freq))
    phases = rng.uniform(0, 2 * np.pi, size=(1, k, n_freq))
    amps = amplitude * rng.uniform(0.5, 1.5, size=(1, k, n_freq))
    return np.sum(amps * np.sin(freqs * t + phases), axis=2)


@pytest.fixture
def correlated_frame():
    """Two strongly correlated variates plus two independent ones."""
    rng = np.random.default_rng(42)
    T = 360
    base = np.cumsum(rng.normal(size=(T, 1)), axis=0)
    values = np.hstack([
        base + 0.05 * rng.normal(size=(T, 1)),
        -base + 0.05 * rng.normal(size=(T, 1)),
        rng.normal(size=(T, 1)),
        np.cumsum(rng.normal(size=(T, 1)), axis=0),
    ])
    return make_frame(values, train_end=240, val_end=300, test_end=360,
                      names=("up", "down", "noise", "walk"))


@pytest.fixture
def planted_frame():
    """Noiseless sinusoid frame: lookback 8 determines the future exactly."""
    values = sinusoid_series(T=420, k=2, n_freq=4, seed=3)
    return make_frame(values, train_end=300, val_end=360, test_end=420)


def write_csv(path, values, names=None, dates=None):
    values = np.asarray(values)
    T, k = values.shape
    names = names or [f"v{i}" for i in range(k)]
    with open(path, "w") as f:
        f.write("date," + ",".join(names) + "\n")
        for t in range(T):
            date = dates[t] if dates else f"2020-01-01 {t:02d}:00:00"
            f.write(date + "," + ",".join(repr(float(v)) for v in values[t]) + "\n")
    return path
