"""Inequality and association across CBGs.

``gini`` integrates the weighted Lorenz curve with the trapezoid rule,
``G = 1 - sum (X_k - X_{k-1}) * (Y_k + Y_{k-1})``, where X is the cumulative
population share and Y the cumulative share of the variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .catchment import MODES, Mode
from .dataset import DEMOGRAPHICS, CityDataset
from .indicators import INDICATOR_NAMES, IndicatorRow

REPORT_THRESHOLD = 0.3


@dataclass(frozen=True, eq=False)
class WeightedSeries:
    values: np.ndarray
    weights: np.ndarray

    def __init__(self, values, weights=None):
        v = np.asarray(values, dtype=float).reshape(-1)
        w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if v.shape != w.shape:
            raise ValueError("values and weights differ in length")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(w)):
            raise ValueError("values and weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not w.sum() > 0:
            raise ValueError("total weight must be positive")
        order = np.argsort(v, kind="stable")
        object.__setattr__(self, "values", v[order])
        object.__setattr__(self, "weights", w[order])

    @classmethod
    def from_pairs(cls, entries: Iterable[tuple[float, float]]) -> "WeightedSeries":
        entries = list(entries)
        return cls([e[0] for e in entries], [e[1] for e in entries])

    def __len__(self):
        return len(self.values)


def lorenz(series: WeightedSeries) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative population and value shares, each starting at 0."""
    w, v = series.weights, series.values
    x = np.concatenate(([0.0], np.cumsum(w) / w.sum()))
    y = np.concatenate(([0.0], np.cumsum(w * v) / np.dot(w, v)))
    return x, y


def gini(series: WeightedSeries) -> float:
    if np.any(series.values < 0):
        raise ValueError("Gini is undefined for negative values")
    if not np.dot(series.weights, series.values) > 0:
        raise ValueError("Gini is undefined when the weighted total is zero")
    x, y = lorenz(series)
    g = 1.0 - float(np.sum(np.diff(x) * (y[1:] + y[:-1])))
    return min(max(g, 0.0), 1.0)


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Product-moment correlation over pairwise-complete entries.

    Returns None when fewer than three pairs remain or either side is constant.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y differ in length")
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) < 3 or x.min() == x.max() or y.min() == y.max():
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class CorrelationCell:
    indicator: str
    mode: Mode
    variable: str
    r: float | None
    n: int
    status: str = "ok"   # ok | degenerate | insufficient

    @property
    def reportable(self) -> bool:
        return self.r is not None and abs(self.r) >= REPORT_THRESHOLD


@dataclass
class CorrelationMatrix:
    city: str
    cells: list[CorrelationCell]
    diagnostics: list[str] = field(default_factory=list)

    def get(self, indicator: str, mode, variable: str) -> CorrelationCell:
        for c in self.cells:
            if c.indicator == indicator and c.mode == mode and c.variable == variable:
                return c
        raise KeyError((indicator, mode, variable))


def _indicator_columns(rows: Sequence[IndicatorRow], ds: CityDataset):
    """{(indicator, mode): array over CBG positions, NaN where missing}."""
    modes = [m for m in MODES if any(r.mode == m for r in rows)]
    pos = {c: i for i, c in enumerate(ds.cbg_ids)}
    cols = {}
    for name in INDICATOR_NAMES:
        for m in modes:
            cols[(name, m)] = np.full(ds.n_cbgs, np.nan)
    for r in rows:
        if r.values is None:
            continue
        i = pos[r.cbg_id]
        for name in INDICATOR_NAMES:
            v = getattr(r.values, name)
            if v is not None:
                cols[(name, r.mode)][i] = v
    return cols


def correlation_matrix(rows: Sequence[IndicatorRow], ds: CityDataset, city: str | None = None) -> CorrelationMatrix:
    city = city or ds.city_id
    demo = {k: ds.cbgs[k].to_numpy(dtype=float) for k in DEMOGRAPHICS}
    complete = np.all([np.isfinite(v) for v in demo.values()], axis=0) if ds.n_cbgs else np.zeros(0, bool)
    if int(np.count_nonzero(complete)) < 3:
        return CorrelationMatrix(city, [], [
            f"only {int(np.count_nonzero(complete))} CBGs with complete demographics; need 3"])
    cells, diags = [], []
    for (name, mode), x in _indicator_columns(rows, ds).items():
        for var in DEMOGRAPHICS:
            y = demo[var]
            n = int(np.count_nonzero(np.isfinite(x) & np.isfinite(y)))
            if n < 3:
                cells.append(CorrelationCell(name, mode, var, None, n, "insufficient"))
                continue
            r = pearson(x, y)
            if r is None:
                cells.append(CorrelationCell(name, mode, var, None, n, "degenerate"))
                diags.append(f"{name}/{mode.value} vs {var}: zero variance")
            else:
                cells.append(CorrelationCell(name, mode, var, r, n))
    return CorrelationMatrix(city, cells, diags)


@dataclass(frozen=True)
class IndicatorStats:
    indicator: str
    mode: Mode
    n: int
    mean: float
    median: float
    gini: float | None
    weighting: str


@dataclass
class CitySummary:
    city: str
    stats: list[IndicatorStats]
    diagnostics: list[str] = field(default_factory=list)

    def get(self, indicator: str, mode) -> IndicatorStats:
        for s in self.stats:
            if s.indicator == indicator and s.mode == mode:
                return s
        raise KeyError((indicator, mode))


def city_summary(rows: Sequence[IndicatorRow], ds: CityDataset, weighting: str = "population",
                 city: str | None = None) -> CitySummary:
    """Mean, median and Gini per (indicator, mode) over non-null CBG values."""
    if weighting not in ("population", "unweighted"):
        raise ValueError(f"unknown weighting {weighting!r}")
    city = city or ds.city_id
    stats, diags = [], []
    pop = ds.cbg_population.astype(float)
    for (name, mode), x in _indicator_columns(rows, ds).items():
        ok = np.isfinite(x)
        if not ok.any():
            diags.append(f"{name}/{mode.value}: no non-null values; row omitted")
            continue
        vals = x[ok]
        g = None
        try:
            w = pop[ok] if weighting == "population" else None
            g = gini(WeightedSeries(vals, w))
        except ValueError as exc:
            diags.append(f"{name}/{mode.value}: Gini not computed ({exc})")
        stats.append(IndicatorStats(name, mode, int(ok.sum()), float(vals.mean()),
                                    float(np.median(vals)), g, weighting))
    return CitySummary(city, stats, diags)
