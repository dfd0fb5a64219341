"""Price ingestion, NAV profiles, engineered features and window slicing.

Feature order along the D axis (fixed, D = 7):

    0  daily log return            ln(P_t / P_{t-1})
    1  cumulative log return 1w    ln(P_t / P_{t-5})
    2  cumulative log return 2w    ln(P_t / P_{t-10})
    3  cumulative log return 1m    ln(P_t / P_{t-21})
    4  cumulative log return 2m    ln(P_t / P_{t-42})
    5  RSI, 14-day Wilder smoothing, in [0, 100]
    6  MACD line, EMA12 - EMA26 of the start-normalised price P_t / P_0
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "log_return_1d",
    "cum_log_return_5d",
    "cum_log_return_10d",
    "cum_log_return_21d",
    "cum_log_return_42d",
    "rsi_14",
    "macd_12_26",
)
HORIZONS = (5, 10, 21, 42)
RSI_PERIOD = 14
MACD_FAST, MACD_SLOW = 12, 26
WARMUP = 45
MAX_MISSING_FRACTION = 0.05
STD_EPS = 1e-8

_MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class PriceMatrix:
    values: np.ndarray  # (T_total, N)
    asset_ids: tuple
    dates: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))
        object.__setattr__(self, "dates", tuple(self.dates))
        if v.ndim != 2 or v.shape != (len(self.dates), len(self.asset_ids)):
            raise DataError(f"price grid {v.shape} does not match {len(self.dates)} dates x "
                            f"{len(self.asset_ids)} assets")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise DataError("prices must be finite and strictly positive")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")

    @property
    def n_assets(self):
        return self.values.shape[1]

    @property
    def n_times(self):
        return self.values.shape[0]

    def slice(self, start, stop):
        return PriceMatrix(self.values[start:stop], self.asset_ids, self.dates[start:stop])

    def scaled(self, factors):
        return PriceMatrix(self.values * np.asarray(factors, dtype=np.float64)[None, :],
                           self.asset_ids, self.dates)

    def take_assets(self, idx):
        idx = list(idx)
        return PriceMatrix(self.values[:, idx], [self.asset_ids[i] for i in idx], self.dates)


@dataclass(frozen=True)
class NAVMatrix:
    values: np.ndarray  # (T, N), row 0 is the base date
    base_index: int


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray  # (N, D, T)
    asset_ids: tuple
    offset: int = 0  # price-time index of the first column

    @property
    def shape(self):
        return self.values.shape

    def window(self, start, length):
        return FeatureTensor(self.values[:, :, start:start + length], self.asset_ids,
                             self.offset + start)


@dataclass(frozen=True)
class WindowSlice:
    start: int  # index into the feature time axis
    length: int
    features: FeatureTensor
    prices: PriceMatrix


# -- ingestion -------------------------------------------------------------

def _parse_date(text, row):
    try:
        return date.fromisoformat(text.strip())
    except ValueError as exc:
        raise DataError(f"row {row}: bad ISO-8601 date {text!r}") from exc


def load_prices(path):
    """Read a ``date,ASSET1,ASSET2,...`` CSV into a cleaned :class:`PriceMatrix`.

    Assets with more than 5% missing rows are dropped with a warning; the
    remaining gaps are forward-filled (leading gaps back-filled from the
    first observation).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise DataError(f"{path}: header must be 'date,<asset>,...'")
        assets = [h.strip() for h in header[1:]]
        if len(set(assets)) != len(assets):
            raise DataError(f"{path}: duplicate asset columns")
        dates, rows = [], []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            dates.append(_parse_date(row[0], row_no))
            vals = []
            for asset, cell in zip(assets, row[1:]):
                cell = cell.strip()
                if cell.lower() in _MISSING:
                    vals.append(np.nan)
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(f"row {row_no}, column {asset!r}: not a number: {cell!r}") from None
                if not math.isfinite(x) or x <= 0:
                    raise DataError(f"row {row_no}, column {asset!r}: price must be positive, got {cell}")
                vals.append(x)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    dates = [dates[i] for i in order]
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise DataError(f"{path}: duplicate dates")
    grid = np.array(rows, dtype=np.float64)[order]
    return clean_prices(grid, assets, dates)


def clean_prices(grid, assets, dates):
    grid = np.array(grid, dtype=np.float64)
    missing = np.isnan(grid).mean(axis=0)
    keep = [j for j in range(grid.shape[1]) if missing[j] <= MAX_MISSING_FRACTION]
    for j in range(grid.shape[1]):
        if j not in keep:
            log.warning("dropping asset %s: %.1f%% of rows missing", assets[j], 100 * missing[j])
    if not keep:
        raise DataError("no assets left after cleaning")
    grid = grid[:, keep]
    for j in range(grid.shape[1]):
        col = grid[:, j]
        valid = ~np.isnan(col)
        if not valid.any():
            raise DataError(f"asset {assets[keep[j]]} has no observations")
        idx = np.where(valid, np.arange(len(col)), 0)
        np.maximum.accumulate(idx, out=idx)
        filled = col[idx]
        first = np.argmax(valid)
        filled[:first] = col[first]
        grid[:, j] = filled
    return PriceMatrix(grid, [assets[j] for j in keep], dates)


def load_sectors(path):
    """Read ``asset,sector_code`` rows into a dict."""
    out = {}
    with Path(path).open(newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or (row_no == 1 and row[0].strip().lower() == "asset"):
                continue
            if len(row) != 2:
                raise DataError(f"sector file row {row_no}: expected 'asset,sector_code'")
            out[row[0].strip()] = row[1].strip()
    return out


def write_prices(prices, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *prices.asset_ids])
        for d, row in zip(prices.dates, prices.values):
            w.writerow([d.isoformat() if hasattr(d, "isoformat") else d, *(repr(float(x)) for x in row)])


# -- NAV and features ------------------------------------------------------------

def compute_nav(prices, t0=0):
    values = prices.values if isinstance(prices, PriceMatrix) else np.asarray(prices, dtype=np.float64)
    if not 0 <= t0 < values.shape[0]:
        raise IndexError(f"t0={t0} outside [0, {values.shape[0]})")
    base = values[t0]
    if np.any(base <= 0):
        raise ValueError("zero or negative base price")
    nav = values[t0:] / base
    return NAVMatrix(nav, t0)


def _wilder_rsi(p, period=RSI_PERIOD):
    """RSI for every column of ``p`` (T, N); NaN before ``period`` changes exist."""
    T, N = p.shape
    out = np.full((T, N), np.nan)
    if T <= period:
        return out
    d = np.diff(p, axis=0)
    gain = np.where(d > 0, d, 0.0)
    loss = np.where(d < 0, -d, 0.0)
    avg_g = gain[:period].mean(axis=0)
    avg_l = loss[:period].mean(axis=0)
    out[period] = _rsi_from_avgs(avg_g, avg_l)
    for t in range(period + 1, T):
        avg_g = (avg_g * (period - 1) + gain[t - 1]) / period
        avg_l = (avg_l * (period - 1) + loss[t - 1]) / period
        out[t] = _rsi_from_avgs(avg_g, avg_l)
    return out


def _rsi_from_avgs(g, l):
    rsi = np.full(g.shape, 50.0)
    up = (l == 0) & (g > 0)
    rsi[up] = 100.0
    ok = l > 0
    rsi[ok] = 100.0 - 100.0 / (1.0 + g[ok] / l[ok])
    return rsi


def _ema(x, span):
    alpha = 2.0 / (span + 1.0)
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, x.shape[0]):
        out[t] = alpha * x[t] + (1.0 - alpha) * out[t - 1]
    return out


def compute_features(prices):
    """Seven engineered features per asset, dropping the 45-day warm-up.

    Returns a :class:`FeatureTensor` of shape (N, 7, T_total - 45) whose
    ``offset`` is 45, i.e. column k belongs to price row 45 + k.
    """
    p = prices.values
    T, N = p.shape
    if T <= WARMUP:
        raise DataError(f"need more than {WARMUP} price rows for feature warm-up, got {T}")
    feats = np.empty((T, N, len(FEATURE_NAMES)))
    feats[:] = np.nan
    feats[1:, :, 0] = np.log(p[1:] / p[:-1])
    for k, h in enumerate(HORIZONS, start=1):
        feats[h:, :, k] = np.log(p[h:] / p[:-h])
    feats[:, :, 5] = _wilder_rsi(p)
    ntp = p / p[0]
    feats[:, :, 6] = _ema(ntp, MACD_FAST) - _ema(ntp, MACD_SLOW)
    out = feats[WARMUP:].transpose(1, 2, 0)  # N, D, T
    if not np.all(np.isfinite(out)):
        raise DataError("non-finite feature values after warm-up")
    return FeatureTensor(np.ascontiguousarray(out), prices.asset_ids, WARMUP)


# -- windows ------------------------------------------------------------------

def make_windows(T_total, T, stride=1):
    """Start indices of sliding windows: 0, stride, 2*stride, ..."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if T > T_total:
        raise ValueError(f"window length {T} exceeds series length {T_total}")
    return list(range(0, T_total - T + 1, stride))


def window_slices(features, prices, T, stride=1):
    """Pair each feature window with the price rows it covers."""
    starts = make_windows(features.values.shape[2], T, stride)
    out = []
    for s in starts:
        lo = features.offset + s
        out.append(WindowSlice(s, T, features.window(s, T), prices.slice(lo, lo + T)))
    return out


def standardize_window(features, eps=STD_EPS):
    """Per-feature standardisation pooled over all nodes and timesteps."""
    x = features.values if isinstance(features, FeatureTensor) else np.asarray(features)
    mu = x.mean(axis=(0, 2), keepdims=True)
    sd = x.std(axis=(0, 2), keepdims=True)
    z = (x - mu) / (sd + eps)
    if isinstance(features, FeatureTensor):
        return FeatureTensor(z, features.asset_ids, features.offset)
    return z
