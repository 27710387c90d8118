import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evretina.errors import ShapeMismatch
from evretina.evaluation import (
    DegenerateSeries,
    NegativeRate,
    diff_histogram,
    firing_rate_stats,
    pcc_report,
    pearson,
    poisson_raster,
    read_rates_csv,
    weighted_overall_rate,
    write_rates_csv,
)
from evretina.srnn import StepTrace, build_network, reduced_arch

# chi-square 0.999 quantile with 12 degrees of freedom
CHI2_12_999 = 32.909


def test_pearson_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert pearson(a, a) == 1.0
    assert pearson(a, -a) == -1.0
    assert pearson(a, [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)


def test_pearson_errors():
    with pytest.raises(DegenerateSeries):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateSeries):
        pearson([1], [2])
    with pytest.raises(ShapeMismatch):
        pearson([1, 2], [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=3, max_size=20),
    st.floats(0.01, 100),
    st.floats(-100, 100),
    st.integers(0, 2**31),
)
def test_pearson_affine_invariance(a, alpha, beta, seed):
    a = np.array(a)
    if np.ptp(a) < 1e-3:
        return
    b = np.random.default_rng(seed).normal(size=len(a))
    assert abs(pearson(alpha * a + beta, b) - pearson(a, b)) < 1e-12


def test_pcc_report_excludes_constant_cells():
    data = np.array([[1.0, 2.0, 5.0], [2.0, 2.0, 6.0], [3.0, 2.0, 8.0]])
    pred = np.array([[1.0, 0.0, 1.0], [2.0, 1.0, 1.0], [4.0, 3.0, 1.0]])
    r = pcc_report(pred, data)
    assert r.excluded == [1]
    assert r.per_cell[0] == pytest.approx(0.98198, abs=1e-5)
    assert math.isnan(r.per_cell[1]) and r.per_cell[2] == 0.0
    assert r.mean == pytest.approx((r.per_cell[0] + 0.0) / 2)
    with pytest.raises(DegenerateSeries):
        pcc_report(pred[:1], data[:1])


def test_raster_rate_zero_and_errors():
    r = poisson_raster(0.0, 33.0, repeats=10, seed=1)
    assert len(r.repeats) == 10 and all(len(x) == 0 for x in r.repeats)
    for bad in (-1.0, math.nan, math.inf):
        with pytest.raises(NegativeRate):
            poisson_raster(bad, 33.0)


def test_raster_deterministic_and_in_window():
    a = poisson_raster(5.0, 33.0, repeats=10, seed=9)
    b = poisson_raster(5.0, 33.0, repeats=10, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.repeats, b.repeats))
    for times in a.repeats:
        assert ((times >= 0) & (times < 33.0)).all() and (np.diff(times) >= 0).all()


def _chi2_poisson(counts, rate):
    n = len(counts)
    pmf = [math.exp(-rate) * rate**k / math.factorial(k) for k in range(12)]
    expected = [n * p for p in pmf] + [n * (1 - sum(pmf))]
    observed = [int(np.sum(counts == k)) for k in range(12)] + [int(np.sum(counts >= 12))]
    return sum((o - e) ** 2 / e for o, e in zip(observed, expected))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_raster_counts_are_poisson(seed):
    counts = poisson_raster(4.0, 33.0, repeats=10_000, seed=seed).counts
    assert 3.92 <= counts.mean() <= 4.08
    assert _chi2_poisson(counts, 4.0) < CHI2_12_999


def test_chi2_rejects_non_poisson():
    # sanity check on the test statistic itself: a constant count of 4 must be rejected
    assert _chi2_poisson(np.full(10_000, 4), 4.0) > CHI2_12_999


def test_diff_histogram_examples():
    data = np.arange(12.0).reshape(3, 4) / 3
    h = diff_histogram(data, data)
    assert h.central_fraction == 1.0 and h.bins.tolist() == [0]
    h = diff_histogram(data + 1, data)
    assert h.central_fraction == 0.0 and h.bins.tolist() == [1] and h.fractions.tolist() == [1.0]
    with pytest.raises(ShapeMismatch):
        diff_histogram(data, data[:2])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30), st.integers(1, 6))
def test_diff_histogram_matches_recount(seed, n, m):
    rng = np.random.default_rng(seed)
    pred = rng.uniform(0, 6, (n, m))
    data = rng.uniform(0, 6, (n, m))
    h = diff_histogram(pred, data)
    assert math.isclose(h.fractions.sum(), 1.0, rel_tol=1e-12)
    d = (pred - data).ravel()
    for b, f in zip(h.bins, h.fractions):
        assert f == sum(1 for v in d if b - 0.5 <= v < b + 0.5) / d.size
    assert h.central_fraction == sum(1 for v in d if abs(v) <= 0.5) / d.size


def test_reference_layer_rates_weighted():
    rate = weighted_overall_rate([0.0529, 0.0594, 0.2707], [100352, 32768, 128])
    assert abs(rate - 0.0547) <= 0.00005


def _traces(net, per_layer, steps):
    return [StepTrace(spikes={f"s{i + 1}": per_layer[i] for i in range(3)}) for _ in range(steps)]


def test_firing_rates_zero_and_full():
    net = build_network(reduced_arch(), seed=0)
    zero = firing_rate_stats(_traces(net, [0, 0, 0], 5), net)
    assert zero.overall == 0 and all(v == 0 for v in zero.layers.values())
    full = firing_rate_stats(_traces(net, [l.n_neurons for l in net.layers], 5), net)
    assert full.overall == 1.0 and all(v == 1.0 for v in full.layers.values())


def test_firing_rates_from_live_zero_input():
    from evretina import srnn
    from evretina.events import SpikeTensor

    net = build_network(reduced_arch(), seed=0)
    net.reset_state()
    _, traces, _ = srnn.simulate(net, SpikeTensor(np.zeros((4, 1, 16, 16), np.uint8), 33.0))
    assert firing_rate_stats(traces, net).overall == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8))
def test_overall_rate_between_layer_rates(seed, steps):
    net = build_network(reduced_arch(), seed=0)
    rng = np.random.default_rng(seed)
    counts = [int(rng.integers(0, l.n_neurons * steps + 1)) for l in net.layers]
    traces = [StepTrace(spikes={f"s{i + 1}": 0 for i in range(3)}) for _ in range(steps)]
    for i, c in enumerate(counts):
        traces[0].spikes[f"s{i + 1}"] = c
    fr = firing_rate_stats(traces, net)
    vals = list(fr.layers.values())
    assert min(vals) - 1e-15 <= fr.overall <= max(vals) + 1e-15


def test_rates_csv_roundtrip(tmp_path):
    r = np.array([[0.5, 1.25], [3.0, 1e-9]])
    write_rates_csv(tmp_path / "r.csv", r)
    assert np.array_equal(read_rates_csv(tmp_path / "r.csv"), r)
