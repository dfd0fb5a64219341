"""Planted-community factor model used as a ground-truth oracle."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .marketdata import PriceMatrix


@dataclass(frozen=True)
class SyntheticSpec:
    n_assets: int = 30
    n_days: int = 300
    sizes: tuple | None = None  # community sizes; None splits n_assets evenly
    n_communities: int = 3
    factor_vol: float = 0.01
    noise_sigma: float | None = None  # None means half the factor volatility
    switch_day: int | None = None
    switch_sizes: tuple | None = None
    seed: int = 0

    def community_sizes(self):
        if self.sizes is not None:
            sizes = tuple(int(s) for s in self.sizes)
        else:
            base, extra = divmod(self.n_assets, self.n_communities)
            sizes = tuple(base + (1 if c < extra else 0) for c in range(self.n_communities))
        if sum(sizes) != self.n_assets or min(sizes) < 1:
            raise ValueError(f"community sizes {sizes} must be positive and sum to {self.n_assets}")
        return sizes

    @property
    def sigma(self):
        return 0.5 * self.factor_vol if self.noise_sigma is None else self.noise_sigma


@dataclass(frozen=True)
class SyntheticData:
    prices: PriceMatrix
    labels: np.ndarray  # memberships before the switch (or throughout)
    labels_after: np.ndarray
    switch_day: int | None


def _labels(sizes):
    return np.repeat(np.arange(len(sizes)), sizes)


def generate_synthetic(spec):
    """r_i(t) = beta_i f_c(t) + eps_i(t); prices = 100 exp(cumsum r)."""
    sizes = spec.community_sizes()
    if spec.sigma <= 0 or spec.factor_vol <= 0:
        raise ValueError("volatilities must be positive")
    if spec.n_days < 2:
        raise ValueError("need at least two days")
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_assets, spec.n_days
    labels = _labels(sizes)
    labels_after = labels
    if spec.switch_day is not None:
        if not 0 < spec.switch_day < T:
            raise ValueError("switch_day must fall inside the series")
        after_sizes = sizes if spec.switch_sizes is None else tuple(int(s) for s in spec.switch_sizes)
        if sum(after_sizes) != n or min(after_sizes) < 1:
            raise ValueError("switch_sizes must be positive and sum to n_assets")
        labels_after = _labels(after_sizes)[rng.permutation(n)]
    n_factors = max(labels.max(), labels_after.max()) + 1
    factors = rng.normal(0.0, spec.factor_vol, (T, n_factors))
    beta = rng.uniform(0.8, 1.2, n)
    noise = rng.normal(0.0, spec.sigma, (T, n))
    member = np.tile(labels, (T, 1))
    if spec.switch_day is not None:
        member[spec.switch_day:] = labels_after
    r = beta[None, :] * np.take_along_axis(factors, member, axis=1) + noise
    r[0] = 0.0
    prices = 100.0 * np.exp(np.cumsum(r, axis=0))
    ids = [f"S{i:03d}" for i in range(n)]
    d0 = date(2020, 1, 1)
    dates = [d0 + timedelta(days=k) for k in range(T)]
    return SyntheticData(PriceMatrix(prices, ids, dates), labels, labels_after, spec.switch_day)
