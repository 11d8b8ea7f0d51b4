"""Price series: CSV ingestion, normalization, chronological splits, synthetic prices."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError

STEP = np.timedelta64(30, "m")
CSV_HEADER = ("timestamp", "price_usd_per_mwh")


@dataclass(frozen=True)
class PriceSeries:
    """Half-hourly prices in USD/MWh.

    ``price_max`` is the normalization constant. It defaults to the series
    maximum and is inherited by segments produced with :func:`chrono_split`,
    so every segment is scaled by the max of the full loaded series.
    """

    timestamps: np.ndarray  # datetime64[s]
    prices_usd: np.ndarray
    price_max: float | None = None
    train_end: int | None = None
    val_end: int | None = None

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        prices = np.asarray(self.prices_usd, dtype=np.float64)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "prices_usd", prices)
        if ts.shape != prices.shape or ts.ndim != 1:
            raise DataError("timestamps and prices must be 1-D arrays of equal length")
        if len(ts) > 1:
            gaps = np.diff(ts)
            bad = np.nonzero(gaps != STEP)[0]
            if len(bad):
                i = bad[0]
                raise DataError(f"non-uniform spacing between {ts[i]} and {ts[i + 1]} (index {i + 1})")
        if self.price_max is None and len(prices):
            object.__setattr__(self, "price_max", float(prices.max()))

    def __len__(self):
        return len(self.prices_usd)

    @property
    def normalized(self) -> np.ndarray:
        return normalize(self, self.price_max)


def _parse_row(row, lineno, path):
    if len(row) != 2:
        raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
    try:
        ts = datetime.fromisoformat(row[0].strip())
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: bad timestamp {row[0]!r}") from exc
    try:
        price = float(row[1])
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: bad price {row[1]!r}") from exc
    if not np.isfinite(price):
        raise DataError(f"{path}:{lineno}: non-finite price")
    return np.datetime64(ts.replace(tzinfo=None), "s"), price


def load_csv(path) -> PriceSeries:
    """Read a ``timestamp,price_usd_per_mwh`` file with ISO-8601 timestamps."""
    path = Path(path)
    stamps, prices = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            ts, price = _parse_row(row, lineno, path)
            if stamps and ts <= stamps[-1]:
                kind = "duplicated" if ts == stamps[-1] else "out-of-order"
                raise DataError(f"{path}:{lineno}: {kind} timestamp {ts}")
            stamps.append(ts)
            prices.append(price)
    if not prices:
        raise DataError(f"{path}: no data rows")
    return PriceSeries(np.array(stamps, dtype="datetime64[s]"), np.array(prices))


def write_csv(series: PriceSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for ts, p in zip(series.timestamps, series.prices_usd):
            w.writerow([str(ts), repr(float(p))])


def normalize(series: PriceSeries, price_max: float | None = None) -> np.ndarray:
    """Prices divided by ``price_max`` (the series max when omitted).

    Negative prices map to negative values; nothing is clipped.
    """
    if price_max is None:
        price_max = float(series.prices_usd.max())
    if not price_max > 0:
        raise ContractViolation(f"price_max must be positive, got {price_max}")
    return series.prices_usd / price_max


def denormalize(x: np.ndarray, price_max: float) -> np.ndarray:
    return np.asarray(x) * price_max


def chrono_split(series: PriceSeries, n_train: int, n_val: int, n_test: int):
    """Contiguous (train, validation, test) segments taken from the start of the series."""
    if min(n_train, n_val, n_test) < 0:
        raise ContractViolation("segment lengths must be non-negative")
    need = n_train + n_val + n_test
    if need > len(series):
        raise DataError(f"series has {len(series)} points, split needs {need} ({need - len(series)} short)")
    bounds = [0, n_train, n_train + n_val, need]
    segs = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        segs.append(
            replace(series, timestamps=series.timestamps[lo:hi], prices_usd=series.prices_usd[lo:hi],
                    train_end=None, val_end=None)
        )
    return tuple(segs)


@dataclass(frozen=True)
class SynthParams:
    """Generator settings; defaults give U.K.-like half-hourly prices around $50/MWh."""

    base_price: float = 50.0
    daily_amplitude: float = 40.0
    weekly_amplitude: float = 5.0
    noise_std: float = 3.0
    spike_prob: float = 0.01
    spike_mean: float = 60.0
    spike_max: float = 190.81
    floor: float = 0.0
    allow_negative: bool = False
    start: str = "2017-01-01T00:00:00"


def synth_prices(length: int, seed: int, params: SynthParams | None = None) -> PriceSeries:
    """Daily sinusoid (48 steps) + weekly modulation + noise + exponential spikes.

    Values are floored at ``params.floor``; with ``allow_negative`` the floor
    is skipped entirely.
    """
    if length <= 0:
        raise ContractViolation("length must be positive")
    p = params or SynthParams()
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    # trough around 04:00, peak around 16:00
    daily = -p.daily_amplitude * np.cos(2 * np.pi * (t - 8) / 48)
    weekly = p.weekly_amplitude * np.sin(2 * np.pi * t / (48 * 7))
    noise = p.noise_std * rng.standard_normal(length)
    spikes = np.where(rng.random(length) < p.spike_prob, rng.exponential(p.spike_mean, length), 0.0)
    prices = p.base_price + daily + weekly + noise + spikes
    prices = np.minimum(prices, max(p.spike_max, p.base_price + p.daily_amplitude + p.weekly_amplitude))
    if not p.allow_negative:
        prices = np.maximum(prices, p.floor)
    start = np.datetime64(p.start, "s")
    return PriceSeries(start + STEP * t, prices)
