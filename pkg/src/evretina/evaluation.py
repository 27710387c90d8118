"""Prediction quality metrics and firing statistics."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EvretinaError, ShapeMismatch


class DegenerateSeries(EvretinaError, ValueError):
    pass


class NegativeRate(EvretinaError, ValueError):
    pass


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatch(f"series shapes differ: {a.shape} vs {b.shape}")
    if len(a) < 2:
        raise DegenerateSeries("need at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa == 0 or sbb == 0:
        raise DegenerateSeries("correlation undefined for a constant series")
    return float(np.clip((da @ db) / math.sqrt(saa * sbb), -1.0, 1.0))


@dataclass
class PccReport:
    per_cell: list[float]   # NaN where the recorded series is constant
    excluded: list[int]     # cells with constant recorded series
    mean: float             # headline score: mean over non-excluded cells
    pooled: float           # PCC of all values flattened


def pcc_report(pred, data) -> PccReport:
    """Per-cell PCC over windows for ``[n_windows, n_cells]`` rate matrices.

    A constant prediction against a varying recording scores 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    if pred.shape != data.shape or pred.ndim != 2:
        raise ShapeMismatch(f"rate matrices differ: {pred.shape} vs {data.shape}")
    if pred.shape[0] < 2:
        raise DegenerateSeries(f"need at least two windows, got {pred.shape[0]}")
    per, excluded = [], []
    for c in range(pred.shape[1]):
        if np.ptp(data[:, c]) == 0:
            per.append(math.nan)
            excluded.append(c)
        elif np.ptp(pred[:, c]) == 0:
            per.append(0.0)
        else:
            per.append(pearson(pred[:, c], data[:, c]))
    valid = [r for r in per if not math.isnan(r)]
    mean = float(np.mean(valid)) if valid else math.nan
    try:
        pooled = pearson(pred.ravel(), data.ravel())
    except DegenerateSeries:
        pooled = math.nan
    return PccReport(per, excluded, mean, pooled)


def mean_cell_pcc(pred, data) -> float:
    if np.asarray(data).shape[0] < 2:
        return math.nan
    return pcc_report(pred, data).mean


# ------------------------------------------------------------------ raster


@dataclass
class Raster:
    repeats: list[np.ndarray]  # spike times in ms, sorted, within [0, window_ms)
    window_ms: float

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(r) for r in self.repeats])

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["repeat", "t_ms"])
            for k, times in enumerate(self.repeats):
                for t in times:
                    w.writerow([k, repr(float(t))])


def poisson_raster(rate: float, window_ms: float, repeats: int = 10, seed: int = 0) -> Raster:
    """``repeats`` Poisson realizations of an expected count ``rate`` per window."""
    if rate < 0 or not math.isfinite(rate):
        raise NegativeRate(f"rate must be finite and >= 0, got {rate}")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(rate, size=repeats)
    out = []
    for n in counts:
        out.append(np.sort(rng.uniform(0.0, window_ms, size=int(n))))
    return Raster(out, float(window_ms))


# --------------------------------------------------------------- histogram


@dataclass
class DiffHistogram:
    bins: np.ndarray       # integer bin centers
    fractions: np.ndarray  # fraction of differences per bin
    central_fraction: float  # fraction with |pred - data| <= 0.5

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["bin", "fraction"])
            for b, fr in zip(self.bins, self.fractions):
                w.writerow([int(b), repr(float(fr))])


def diff_histogram(pred, data) -> DiffHistogram:
    """Histogram of ``pred - data`` over all cells and windows in unit bins
    centered on integers (bin k covers [k - 0.5, k + 0.5))."""
    pred = np.asarray(pred, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    if pred.shape != data.shape:
        raise ShapeMismatch(f"{pred.shape} vs {data.shape}")
    d = (pred - data).ravel()
    if d.size == 0:
        return DiffHistogram(np.zeros(0, dtype=int), np.zeros(0), math.nan)
    idx = np.floor(d + 0.5).astype(np.int64)
    lo, hi = int(idx.min()), int(idx.max())
    counts = np.bincount(idx - lo, minlength=hi - lo + 1)
    return DiffHistogram(
        np.arange(lo, hi + 1), counts / d.size, float(np.mean(np.abs(d) <= 0.5))
    )


# ------------------------------------------------------------ firing rates


@dataclass
class FiringRates:
    layers: dict[str, float]
    overall: float


def weighted_overall_rate(rates: Sequence[float], counts: Sequence[int]) -> float:
    """Neuron-count-weighted mean of per-layer firing rates."""
    r = np.asarray(rates, dtype=np.float64)
    n = np.asarray(counts, dtype=np.float64)
    return float((r * n).sum() / n.sum())


def firing_rate_stats(traces, net) -> FiringRates:
    """Per-layer fraction of neuron-steps that spiked, and the overall rate.

    ``traces`` is a sequence of :class:`StepTrace` (one per simulated step),
    possibly spanning several windows.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    names = [f"s{i + 1}" for i in range(len(net.layers))]
    counts = [l.n_neurons for l in net.layers]
    steps = len(traces)
    spikes = [sum(tr.spikes.get(n, 0) for tr in traces) for n in names]
    layers = {n: s / (c * steps) for n, s, c in zip(names, spikes, counts)}
    overall = sum(spikes) / (sum(counts) * steps)
    return FiringRates(layers, overall)


def write_pcc_csv(path: str | os.PathLike, report: PccReport) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["cell", "pcc"])
        for c, r in enumerate(report.per_cell):
            w.writerow([c, repr(float(r))])


def write_rates_csv(path: str | os.PathLike, rates) -> None:
    """``[n_windows, n_cells]`` matrix as ``window,cell_0,...`` rows."""
    rates = np.asarray(rates, dtype=np.float64)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["window"] + [f"cell_{c}" for c in range(rates.shape[1])])
        for k, row in enumerate(rates):
            w.writerow([k] + [repr(float(v)) for v in row])


def read_rates_csv(path: str | os.PathLike) -> np.ndarray:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or not rows[0] or rows[0][0] != "window":
        raise ValueError(f"{path}: expected a 'window,cell_0,...' header")
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(len(rows) - 1, len(rows[0]) - 1)
