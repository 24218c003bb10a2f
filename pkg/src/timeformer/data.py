"""Series ingestion, chronological splits, z-scoring and sliding windows."""

from __future__ import annotations

import csv
import dataclasses
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .container import read_container, write_container
from .errors import ConfigurationError, ParseError
from .nn import make_rng

# (train, val, test) sizes per benchmark
SPLIT_PRESETS = {
    "etth1": (8545, 2881, 2881),
    "etth2": (8545, 2881, 2881),
    "ettm1": (34465, 11521, 11521),
    "ettm2": (34465, 11521, 11521),
    "exchange": (5120, 665, 1422),
    "weather": (36792, 5271, 10540),
    "electricity": (18317, 2633, 5261),
}

SYNTHETIC_KINDS = ("ar1", "sine_mix", "trend_season_noise")
DATASET_KIND = "timeformer-dataset"
_TIMESTAMP_NAMES = {"date", "time", "timestamp", "datetime", "ds"}


@dataclass
class SeriesDataset:
    values: np.ndarray  # [L_total, N], raw scale
    column_names: list
    split_sizes: Optional[tuple] = None
    norm_mean: Optional[np.ndarray] = None
    norm_std: Optional[np.ndarray] = None
    normalized: Optional[np.ndarray] = None
    source: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.split_sizes is not None and sum(self.split_sizes) > len(self.values):
            raise ConfigurationError(f"split sizes {self.split_sizes} exceed series length {len(self.values)}")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def ranges(self) -> tuple[range, range, range]:
        sizes = self.split_sizes if self.split_sizes is not None else ratio_sizes(self.length)
        return split(self.length, sizes=sizes)

    def split_range(self, name: str) -> range:
        try:
            return self.ranges()[("train", "val", "test").index(name)]
        except ValueError:
            raise ConfigurationError(f"unknown split {name!r}; use train, val or test") from None

    @property
    def model_values(self) -> np.ndarray:
        """Values the model consumes: normalized when available."""
        return self.normalized if self.normalized is not None else self.values


def load_csv(path, timestamp_column: Optional[str] = None) -> SeriesDataset:
    """Read a rectangular numeric CSV with a header row.

    A leading timestamp column is dropped: either the named
    ``timestamp_column`` or, when not given, a first column whose header is a
    usual timestamp name or whose first cell is not numeric.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    body = [r for r in body if r and any(c.strip() for c in r)]
    if not body:
        raise ParseError(f"{path}: no data rows")

    drop_first = False
    if timestamp_column is not None:
        if header[0] != timestamp_column:
            raise ParseError(f"{path}: first column is {header[0]!r}, expected timestamp column {timestamp_column!r}")
        drop_first = True
    elif header[0].lower() in _TIMESTAMP_NAMES or not _is_float(body[0][0]):
        drop_first = True

    width = len(header)
    out = np.empty((len(body), width - int(drop_first)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != width:
            raise ParseError(f"{path}: row {line} has {len(row)} fields, expected {width}")
        cells = row[1:] if drop_first else row
        for j, cell in enumerate(cells):
            try:
                out[i, j] = float(cell)
            except ValueError:
                col = j + 1 + int(drop_first)
                raise ParseError(f"{path}: non-numeric value {cell!r} at row {line}, column {col} ({header[col - 1]!r})") from None
    names = header[1:] if drop_first else header
    return SeriesDataset(out, list(names), source=str(path))


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def ratio_sizes(length: int, ratios: Sequence[float] = (0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) > 1 + 1e-9:
        raise ConfigurationError(f"invalid split ratios {ratios}")
    train = int(length * ratios[0])
    test = int(length * ratios[2])
    val = length - train - test if abs(sum(ratios) - 1) < 1e-9 else int(length * ratios[1])
    return train, val, test


def split(length: int, ratios: Optional[Sequence[float]] = None, sizes: Optional[Sequence[int]] = None,
          preset: Optional[str] = None) -> tuple[range, range, range]:
    """Contiguous chronological (train, val, test) index ranges."""
    if preset is not None:
        key = preset.lower()
        if key not in SPLIT_PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; known: {', '.join(sorted(SPLIT_PRESETS))}")
        sizes = SPLIT_PRESETS[key]
    if sizes is None:
        sizes = ratio_sizes(length, ratios or (0.7, 0.1, 0.2))
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 0:
        raise ConfigurationError(f"invalid split sizes {sizes}")
    if sum(sizes) > length:
        raise ConfigurationError(f"split sizes {sizes} (sum {sum(sizes)}) exceed series length {length}")
    a, b, c = sizes
    return range(0, a), range(a, a + b), range(a + b, a + b + c)


def normalize(dataset: SeriesDataset) -> SeriesDataset:
    """Z-score every split with statistics from the train split only."""
    train = dataset.split_range("train")
    if len(train) == 0:
        raise ConfigurationError("cannot normalize: train split is empty")
    block = dataset.values[train.start:train.stop]
    mean = block.mean(axis=0)
    std = block.std(axis=0)
    degenerate = std < 1e-8
    if degenerate.any():
        cols = [dataset.column_names[i] if i < len(dataset.column_names) else str(i)
                for i in np.flatnonzero(degenerate)]
        warnings.warn(f"constant channel(s) {cols} in train split; shifting without scaling", RuntimeWarning,
                      stacklevel=2)
        std = np.where(degenerate, 1.0, std)
    return dataclasses.replace(dataset, norm_mean=mean, norm_std=std, normalized=(dataset.values - mean) / std)


def denormalize(values: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return np.asarray(values) * std + mean


@dataclass
class WindowSample:
    input: np.ndarray  # [L_h, N]
    target: np.ndarray  # [L_f, N]
    start_index: int


def window_count(range_length: int, lookback: int, horizon: int) -> int:
    return max(0, range_length - lookback - horizon + 1)


def window_starts(split_range: range, lookback: int, horizon: int, seed: Optional[int] = None) -> np.ndarray:
    """Absolute start indices of stride-1 windows lying fully inside ``split_range``.

    With ``seed`` the order is a deterministic shuffle.
    """
    n = window_count(len(split_range), lookback, horizon)
    if n == 0:
        warnings.warn(f"range of length {len(split_range)} is too short for lookback {lookback} + horizon {horizon}",
                      RuntimeWarning, stacklevel=2)
        return np.zeros(0, dtype=np.int64)
    starts = split_range.start + np.arange(n, dtype=np.int64)
    if seed is not None:
        starts = starts[make_rng(seed).permutation(n)]
    return starts


def windows(values: np.ndarray, split_range: range, lookback: int, horizon: int,
            seed: Optional[int] = None) -> Iterator[WindowSample]:
    for s in window_starts(split_range, lookback, horizon, seed):
        s = int(s)
        yield WindowSample(values[s:s + lookback], values[s + lookback:s + lookback + horizon], s)


def gather_windows(values: np.ndarray, starts: np.ndarray, lookback: int, horizon: int):
    """Stacked ``(inputs [B, L_h, N], targets [B, L_f, N])`` for the given starts."""
    starts = np.asarray(starts, dtype=np.int64)
    idx = starts[:, None] + np.arange(lookback + horizon)[None, :]
    block = values[idx]
    return block[:, :lookback], block[:, lookback:]


def synthetic(kind: str, length: int, n_channels: int = 1, seed: int = 0, noise: Optional[float] = None,
              x0: Optional[float] = None, phi: float = 0.9, period: int = 24) -> SeriesDataset:
    """Deterministic synthetic series.

    ``ar1``: ``x_t = phi * x_{t-1} + noise * e_t``. ``sine_mix``: two or three
    incommensurate sinusoids plus noise. ``trend_season_noise``: linear trend
    plus a ``period``-step sine plus noise.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {', '.join(SYNTHETIC_KINDS)}")
    if length < 1 or n_channels < 1:
        raise ConfigurationError("length and n_channels must be >= 1")
    rng = make_rng(seed)
    t = np.arange(length, dtype=np.float64)
    out = np.empty((length, n_channels))
    if kind == "ar1":
        sigma = 1.0 if noise is None else noise
        eps = rng.standard_normal((length, n_channels))
        start = rng.standard_normal(n_channels) * sigma / np.sqrt(1 - phi**2) if x0 is None else np.full(n_channels, x0)
        out[0] = start
        for i in range(1, length):
            out[i] = phi * out[i - 1] + sigma * eps[i]
    elif kind == "sine_mix":
        sigma = 0.1 if noise is None else noise
        periods = np.array([24.0, 24.0 * np.sqrt(2.0), 24.0 * np.pi])
        for c in range(n_channels):
            k = 2 + c % 2
            amps = rng.uniform(0.5, 1.5, size=3)[:k]
            phases = rng.uniform(0, 2 * np.pi, size=3)[:k]
            out[:, c] = sum(a * np.sin(2 * np.pi * t / p + ph) for a, p, ph in zip(amps, periods[:k], phases))
        out += sigma * rng.standard_normal((length, n_channels))
    else:
        sigma = 0.2 if noise is None else noise
        slopes = rng.uniform(-1.0, 1.0, size=n_channels) / max(length, 1)
        amps = rng.uniform(0.8, 1.2, size=n_channels)
        phases = rng.uniform(0, 2 * np.pi, size=n_channels)
        out[:] = slopes * t[:, None] + amps * np.sin(2 * np.pi * t[:, None] / period + phases)
        out += sigma * rng.standard_normal((length, n_channels))
    names = [f"{kind}_{c}" for c in range(n_channels)]
    return SeriesDataset(out, names, source=f"synthetic:{kind}:seed={seed}")


def save_dataset(path, dataset: SeriesDataset) -> None:
    """Cache a dataset (optionally normalized) in the shared container format."""
    arrays = {"values": dataset.values}
    if dataset.normalized is not None:
        arrays.update(normalized=dataset.normalized, norm_mean=dataset.norm_mean, norm_std=dataset.norm_std)
    header = {"kind": DATASET_KIND, "column_names": list(dataset.column_names),
              "split_sizes": list(dataset.split_sizes) if dataset.split_sizes else None, "source": dataset.source}
    write_container(path, header, arrays)


def load_dataset(path) -> SeriesDataset:
    header, arrays = read_container(path)
    if header.get("kind") != DATASET_KIND:
        raise ConfigurationError(f"{path}: not a dataset cache (kind={header.get('kind')!r})")
    sizes = header.get("split_sizes")
    return SeriesDataset(arrays["values"], header["column_names"], tuple(sizes) if sizes else None,
                         arrays.get("norm_mean"), arrays.get("norm_std"), arrays.get("normalized"),
                         header.get("source", ""))
