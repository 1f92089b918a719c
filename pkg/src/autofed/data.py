"""Synthetic non-IID traffic generation, CSV ingestion, windowing, splits,
and train-fit normalization."""

import csv
from dataclasses import dataclass

import numpy as np


class DataConfigError(ValueError):
    pass


class CsvParseError(ValueError):
    pass


@dataclass
class ClientSeries:
    client_id: str
    values: np.ndarray  # (time_steps, n, H)

    @property
    def node_count(self):
        return self.values.shape[1]


@dataclass
class WindowedSample:
    x: np.ndarray  # (T, n, H), normalized
    y: np.ndarray  # (T', n), original units


@dataclass
class SplitDataset:
    train: list
    valid: list
    test: list
    mean: np.ndarray  # (n, H), fit on the train cut only
    std: np.ndarray   # (n, H)


@dataclass
class SyntheticSpec:
    clients: int
    nodes: int
    length: int
    seed: int = 0
    noise_scale: float = 0.3
    daily_period: float = 24.0
    weekly_period: float = 168.0
    base_level: float = 10.0
    daily_amplitude: float = 4.0
    weekly_amplitude: float = 2.0
    level_spread: float = 4.0
    amplitude_spread: float = 2.0
    phase_spread: float = 1.0
    node_scale_spread: float = 0.3
    demand_mode: bool = False
    feat_width: int = 1


def generate_synthetic(spec):
    """Per-client daily+weekly sinusoids with client-specific level, amplitude
    and phase (the non-IID lever), per-node scaling, and Gaussian noise."""
    if spec.length < 3:
        raise DataConfigError("synthetic length too short for one window")
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    out = []
    for c in range(spec.clients):
        level = spec.base_level + rng.uniform(-1, 1) * spec.level_spread
        amp_d = spec.daily_amplitude + rng.uniform(-1, 1) * spec.amplitude_spread
        amp_w = spec.weekly_amplitude + rng.uniform(-1, 1) * spec.amplitude_spread / 2
        phase_d = rng.uniform(-1, 1) * spec.phase_spread
        phase_w = rng.uniform(-1, 1) * spec.phase_spread
        node_scale = 1.0 + rng.uniform(-1, 1, size=spec.nodes) * spec.node_scale_spread
        node_shift = rng.uniform(-0.5, 0.5, size=spec.nodes) * spec.phase_spread
        values = np.empty((spec.length, spec.nodes, spec.feat_width))
        for v in range(spec.nodes):
            shifted = (level
                       + amp_d * np.sin(2 * np.pi * t / spec.daily_period
                                        + phase_d + node_shift[v])
                       + amp_w * np.sin(2 * np.pi * t / spec.weekly_period + phase_w))
            sig = node_scale[v] * shifted
            for f in range(spec.feat_width):
                noise = rng.normal(0.0, spec.noise_scale, size=spec.length)
                values[:, v, f] = sig + noise
        if spec.demand_mode:
            values = np.rint(np.clip(values, 0.0, None))
        out.append(ClientSeries(client_id=f"client-{c}", values=values))
    return out


def load_csv(path):
    """CSV with a header row of node names and one row per time step;
    produces a series of shape (time_steps, n, 1)."""
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            rows = list(reader)
    except OSError as exc:
        raise CsvParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise CsvParseError(f"{path}: empty file")
    header = rows[0]
    n = len(header)
    data = np.empty((len(rows) - 1, n, 1))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != n:
            raise CsvParseError(f"{path}: row {i} has {len(row)} cells, expected {n}")
        for j, cell in enumerate(row, start=1):
            try:
                data[i - 2, j - 1, 0] = float(cell)
            except ValueError:
                raise CsvParseError(
                    f"{path}: non-numeric cell {cell!r} at row {i}, column {j}")
    if data.shape[0] == 0:
        raise CsvParseError(f"{path}: no data rows")
    return ClientSeries(client_id=str(path), values=data)


def save_csv(series, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"node-{i}" for i in range(series.node_count)])
        for row in series.values[:, :, 0]:
            writer.writerow([repr(float(v)) for v in row])


def _windows(values, history, horizon, mean, std, target_channel=0):
    length = values.shape[0]
    out = []
    for start in range(length - history - horizon + 1):
        x = (values[start:start + history] - mean) / std
        y = values[start + history:start + history + horizon, :, target_channel]
        out.append(WindowedSample(x=x, y=y.copy()))
    return out


def window_and_split(series, history, horizon, train_frac=0.6, valid_frac=0.2,
                     std_guard=1e-8):
    """Cut the time axis 60/20/20, window each cut with stride 1, and z-score
    the history blocks with statistics fit on the train cut only. Targets
    stay in original units."""
    values = series.values
    length = values.shape[0]
    window = history + horizon
    n_train = int(length * train_frac)
    n_valid = int(length * valid_frac)
    if min(n_train, n_valid, length - n_train - n_valid) < window:
        raise DataConfigError(
            f"series of length {length} too short: each split needs at least "
            f"{window} steps (history {history} + horizon {horizon})")
    train_cut = values[:n_train]
    valid_cut = values[n_train:n_train + n_valid]
    test_cut = values[n_train + n_valid:]

    mean = train_cut.mean(axis=0)
    std = train_cut.std(axis=0)
    std = np.where(std < std_guard, 1.0, std)

    return SplitDataset(
        train=_windows(train_cut, history, horizon, mean, std),
        valid=_windows(valid_cut, history, horizon, mean, std),
        test=_windows(test_cut, history, horizon, mean, std),
        mean=mean,
        std=std,
    )


def batch_arrays(samples):
    """Stack windowed samples into (B, T, n, H) and (B, T', n) arrays."""
    xs = np.stack([s.x for s in samples])
    ys = np.stack([s.y for s in samples])
    return xs, ys
