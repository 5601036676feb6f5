import math

import numpy as np
import pytest

from mrsav import (
    ProbVector,
    RunningMoments,
    StreamingHistogram,
    coarsen,
    distance_report,
    js_divergence,
    kl_divergence,
    moving_average,
    observed_order,
    tv_distance,
)

from conftest import random_simplex

LN2 = math.log(2.0)


# -- streaming histogram ------------------------------------------------------

def test_hist_push_basic():
    h = StreamingHistogram(0.0, 10.0, 10)
    h.push(3.5)
    assert h.counts[3] == 1 and h.total == 1


def test_hist_push_top_edge_goes_to_last_bin():
    h = StreamingHistogram(0.0, 10.0, 10)
    h.push(10.0)
    assert h.counts[9] == 1 and h.over == 0


def test_hist_push_tails():
    h = StreamingHistogram(0.0, 10.0, 10)
    h.push(-1.0)
    h.push(11.0)
    assert (h.under, h.over) == (1, 1)
    assert h.counts.sum() == 0 and h.total == 2


def test_hist_push_nan_rejected():
    h = StreamingHistogram(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        h.push(float("nan"))
    with pytest.raises(ValueError):
        h.push_many(np.array([0.1, np.nan]))


def test_hist_push_many_matches_push():
    rng = np.random.default_rng(0)
    xs = rng.uniform(-30.0, 30.0, 5000)
    a = StreamingHistogram(-25.0, 25.0, 64)
    b = StreamingHistogram(-25.0, 25.0, 64)
    a.push_many(xs)
    for x in xs:
        b.push(float(x))
    assert np.array_equal(a.counts, b.counts)
    assert (a.under, a.over) == (b.under, b.over)


def test_hist_merge_associativity():
    # one histogram over the stream == merged histograms of its partitions
    rng = np.random.default_rng(1)
    xs = rng.normal(0.0, 8.0, 30_000)
    whole = StreamingHistogram(-25.0, 25.0, 100)
    whole.push_many(xs)
    parts = []
    for chunk in np.array_split(xs, 7):
        h = StreamingHistogram(-25.0, 25.0, 100)
        h.push_many(chunk)
        parts.append(h)
    merged = StreamingHistogram(-25.0, 25.0, 100)
    for h in parts:
        merged.merge(h)
    assert np.array_equal(whole.counts, merged.counts)
    assert (whole.under, whole.over) == (merged.under, merged.over)
    with pytest.raises(ValueError):
        merged.merge(StreamingHistogram(-25.0, 25.0, 50))


def test_normalize_plain():
    h = StreamingHistogram(0.0, 3.0, 3)
    for x in (0.5, 1.5, 2.5, 2.6):
        h.push(x)
    np.testing.assert_allclose(h.normalize().p, [0.25, 0.25, 0.5])


def test_normalize_tail_folding():
    h = StreamingHistogram(0.0, 3.0, 3)
    h.push(0.5)
    h.under = 1
    np.testing.assert_allclose(h.normalize(include_tails=True).p, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(h.normalize(include_tails=False).p, [1.0, 0.0, 0.0])


def test_normalize_delta():
    h = StreamingHistogram(0.0, 1.0, 5)
    for _ in range(9):
        h.push(0.5)
    p = h.normalize().p
    assert p[2] == 1.0 and p.sum() == 1.0


def test_normalize_empty_errors():
    with pytest.raises(ValueError):
        StreamingHistogram(0.0, 1.0, 4).normalize()


# -- divergences --------------------------------------------------------------

def test_kl_examples():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(LN2, abs=1e-12)
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_js_examples():
    assert js_divergence([0.25, 0.75], [0.25, 0.75]) == 0.0
    assert js_divergence([1.0, 0.0], [0.0, 1.0]) == pytest.approx(LN2, abs=1e-12)
    # mixture (0.75, 0.25): 1/2 (0.5 ln(2/3) + 0.5 ln 2 + ln(4/3))
    expected = 0.5 * (0.5 * math.log(2.0 / 3.0) + 0.5 * LN2 + math.log(4.0 / 3.0))
    assert js_divergence([0.5, 0.5], [1.0, 0.0]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.2157616, abs=5e-8)


def test_tv_examples():
    assert tv_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert tv_distance([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert tv_distance([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.5)


def test_length_mismatch_errors():
    for fn in (kl_divergence, js_divergence, tv_distance):
        with pytest.raises(ValueError):
            fn([1.0], [0.5, 0.5])


def test_distance_report():
    rep = distance_report([0.5, 0.5], [1.0, 0.0])
    assert rep.kl_pq == math.inf and rep.pinsker_ok
    rep = distance_report([0.6, 0.4], [0.4, 0.6])
    assert 0.0 < rep.js < LN2 and rep.pinsker_ok
    assert rep.kl_pq == pytest.approx(rep.kl_qp)  # symmetric pair by construction


def test_js_properties_random():
    rng = np.random.default_rng(7)
    ps = random_simplex(rng, 1000, 12, allow_zeros=True)
    qs = random_simplex(rng, 1000, 12, allow_zeros=True)
    for p, q in zip(ps, qs):
        js_pq = js_divergence(p, q)
        assert abs(js_pq - js_divergence(q, p)) <= 1e-14
        assert -1e-15 <= js_pq <= LN2 + 1e-14
        tv = tv_distance(p, q)
        assert 0.0 <= tv <= 1.0
        kl = kl_divergence(p, q)
        if math.isfinite(kl):
            assert tv <= math.sqrt(kl / 2.0) + 1e-12  # Pinsker


def test_identity_of_indiscernibles():
    rng = np.random.default_rng(8)
    for p in random_simplex(rng, 200, 6):
        assert js_divergence(p, p) <= 1e-15
        assert tv_distance(p, p) == 0.0
        q = p.copy()
        q[0] += 1e-6
        q /= q.sum()
        assert js_divergence(p, q) > 0.0 and tv_distance(p, q) > 0.0


def test_tv_triangle_inequality():
    rng = np.random.default_rng(9)
    ps = random_simplex(rng, 500, 8)
    qs = random_simplex(rng, 500, 8)
    rs = random_simplex(rng, 500, 8)
    for p, q, r in zip(ps, qs, rs):
        assert tv_distance(p, q) <= tv_distance(p, r) + tv_distance(r, q) + 1e-14


# -- smoothing / coarsening ---------------------------------------------------

def test_moving_average_identity_window():
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(moving_average(p, 1), p)


def test_moving_average_delta():
    np.testing.assert_allclose(moving_average([0.0, 1.0, 0.0], 3), np.full(3, 1.0 / 3.0))


def test_moving_average_uniform_fixed_point():
    p = np.full(7, 1.0 / 7.0)
    np.testing.assert_allclose(moving_average(p, 3), p)
    np.testing.assert_allclose(moving_average(p, 5), p)


def test_moving_average_preserves_mass():
    rng = np.random.default_rng(10)
    for p in random_simplex(rng, 50, 20):
        out = moving_average(p, 5)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)


def test_moving_average_window_validation():
    p = np.full(4, 0.25)
    with pytest.raises(ValueError):
        moving_average(p, 2)
    with pytest.raises(ValueError):
        moving_average(p, 5)


def test_coarsen_examples():
    np.testing.assert_allclose(coarsen([0.25, 0.25, 0.25, 0.25], 2), [0.5, 0.5])
    p = np.array([0.1, 0.9])
    np.testing.assert_array_equal(coarsen(p, 1), p)
    delta = np.zeros(8)
    delta[5] = 1.0
    np.testing.assert_array_equal(coarsen(delta, 4), [0.0, 1.0])
    with pytest.raises(ValueError):
        coarsen(np.zeros(7), 2)


def test_coarsen_mass_and_data_processing():
    rng = np.random.default_rng(11)
    ps = random_simplex(rng, 300, 24)
    qs = random_simplex(rng, 300, 24)
    for p, q in zip(ps, qs):
        cp, cq = coarsen(p, 4), coarsen(q, 4)
        assert cp.sum() == pytest.approx(p.sum(), abs=1e-15)
        assert tv_distance(cp, cq) <= tv_distance(p, q) + 1e-14


# -- convergence orders -------------------------------------------------------

def test_observed_order_exact_halving():
    assert observed_order([(1, 0.4), (2, 0.2), (4, 0.1)]) == pytest.approx([1.0, 1.0])


def test_observed_order_published_rows():
    # terminal-time study, T=100 -> 200 transition
    (js_order,) = observed_order([(100, 3.3779e-2), (200, 1.7769e-2)])
    assert js_order == pytest.approx(0.9268, abs=5e-5)
    (tv_order,) = observed_order([(100, 3.5182e-1), (200, 2.5147e-1)])
    assert tv_order == pytest.approx(0.4845, abs=5e-5)


def test_observed_order_halving_params():
    orders = observed_order([(2.0**-8, 0.4), (2.0**-9, 0.1)])
    assert orders == pytest.approx([2.0])


def test_observed_order_errors():
    with pytest.raises(ValueError):
        observed_order([(1, 0.5), (3, 0.2)])
    with pytest.raises(ValueError):
        observed_order([(1, -0.5), (2, 0.2)])
    assert observed_order([(1, 0.5), (2, 0.0), (4, 0.1)]) == [None, None]
    assert observed_order([(1, 0.5)]) == []


# -- running moments ----------------------------------------------------------

def test_moments_against_two_pass_oracle():
    rng = np.random.default_rng(12)
    xs = rng.normal(-2.0, 5.0, 50_000)
    acc = RunningMoments()
    acc.push_many(xs)
    assert acc.count == xs.size
    assert acc.mean == pytest.approx(float(np.mean(xs)), rel=1e-12)
    assert acc.variance == pytest.approx(float(np.var(xs)), rel=1e-10)  # population variance


def test_moments_merge_matches_concatenation():
    rng = np.random.default_rng(13)
    xs = rng.uniform(-10.0, 30.0, 9000)
    whole = RunningMoments()
    whole.push_many(xs)
    merged = RunningMoments()
    for chunk in np.array_split(xs, 5):
        part = RunningMoments()
        part.push_many(chunk)
        merged = merged.merge(part)
    assert merged.count == whole.count
    assert merged.mean == pytest.approx(whole.mean, rel=1e-12)
    assert merged.variance == pytest.approx(whole.variance, rel=1e-12)


def test_moments_merge_empty():
    a = RunningMoments()
    b = RunningMoments()
    b.push(4.0)
    assert a.merge(b) == b
    assert b.merge(a) == b
    assert math.isnan(a.variance)


# -- probability container ----------------------------------------------------

def test_prob_vector_validation():
    with pytest.raises(ValueError):
        ProbVector(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        ProbVector(np.array([1.5, -0.5]))
    with pytest.raises(ValueError):
        ProbVector(np.array([np.nan, 1.0]))


def test_prob_vector_binary_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    p = ProbVector(random_simplex(rng, 1, 257)[0], lo=-25.0, hi=25.0)
    path = tmp_path / "dist.pvec"
    p.save(path)
    q = ProbVector.load(path)
    np.testing.assert_array_equal(p.p, q.p)
    assert (q.lo, q.hi) == (-25.0, 25.0)


def test_prob_vector_container_errors():
    p = ProbVector(np.array([0.5, 0.5]), 0.0, 1.0)
    blob = p.to_bytes()
    with pytest.raises(ValueError):
        ProbVector.from_bytes(b"JUNK" + blob[4:])
    with pytest.raises(ValueError):
        ProbVector.from_bytes(blob[:-4])
    bad_version = blob[:4] + (99).to_bytes(4, "little") + blob[8:]
    with pytest.raises(ValueError):
        ProbVector.from_bytes(bad_version)


def test_prob_vector_csv(tmp_path):
    p = ProbVector(np.array([0.25, 0.75]), lo=0.0, hi=2.0)
    path = tmp_path / "dist.csv"
    p.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "bin_center,probability"
    centers = [float(line.split(",")[0]) for line in lines[1:]]
    assert centers == [0.5, 1.5]


def test_prob_vector_smoothed_coarsened_keep_range():
    p = ProbVector(np.full(8, 0.125), lo=-4.0, hi=4.0)
    assert (p.smoothed(3).lo, p.smoothed(3).hi) == (-4.0, 4.0)
    c = p.coarsened(2)
    assert len(c) == 4 and (c.lo, c.hi) == (-4.0, 4.0)
