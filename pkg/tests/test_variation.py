import math
import warnings
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from actpv.errors import DegenerateBucketError, InputError, UndefinedMetricError, UsageError
from actpv.variation import (
    BucketScheme,
    PVTable,
    bucketize,
    correlation_matrix,
    delta_ratio,
    dist_pv,
    pearson,
    pv_table,
    size_sweep,
    value_pv,
)


def naive_std(xs):
    """Two-pass Definition-style oracle in plain Python."""
    n = len(xs)
    m = sum(xs) / n
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (n - 1))


def naive_kl_sum(ps):
    n, c = len(ps), len(ps[0])
    mean = [sum(p[k] for p in ps) / n for k in range(c)]
    return sum(p[k] * math.log(p[k] / mean[k]) for p in ps for k in range(c) if p[k] > 0)


def naive_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    return cov / math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))


class TestValuePV:
    def test_identical(self):
        assert value_pv([1.0, 1.0, 1.0]) == 0.0

    def test_two_points(self):
        assert value_pv([0.0, 1.0]) == pytest.approx(0.70711, abs=1e-5)
        assert value_pv([0.0, 1.0]) == pytest.approx(math.sqrt(0.5), abs=1e-15)

    def test_eight_points(self):
        assert value_pv([2, 4, 4, 4, 5, 5, 7, 9]) == pytest.approx(2.13809, abs=1e-5)
        assert value_pv([2, 4, 4, 4, 5, 5, 7, 9]) == pytest.approx(naive_std([2, 4, 4, 4, 5, 5, 7, 9]), abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(UsageError):
            value_pv([1.0])

    def test_identical_values_exactly_zero(self):
        # a mean like (x + x + x) / 3 can differ from x in the last bit
        x = 0.1 + 0.2
        assert value_pv([x] * 7) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
    def test_matches_oracle(self, xs):
        assert value_pv(xs) == pytest.approx(naive_std(xs), abs=1e-9, rel=1e-9)

    def test_permutation_invariant(self):
        xs = [0.3, 1.7, -2.0, 5.5]
        vals = {value_pv(list(p)) for p in permutations(xs)}
        assert max(vals) - min(vals) < 1e-15


class TestDistPV:
    def test_copies(self):
        assert dist_pv([[0.5, 0.5]] * 3) == 0.0

    def test_opposites(self):
        assert dist_pv([[1, 0], [0, 1]]) == pytest.approx(1.38629, abs=1e-5)
        assert dist_pv([[1, 0], [0, 1]]) == pytest.approx(2 * math.log(2), abs=1e-15)

    def test_worked_pair(self):
        assert dist_pv([[0.8, 0.2], [0.4, 0.6]]) == pytest.approx(0.17261, abs=1e-5)
        assert dist_pv([[0.8, 0.2], [0.4, 0.6]]) == pytest.approx(naive_kl_sum([[0.8, 0.2], [0.4, 0.6]]), abs=1e-15)

    def test_not_normalised(self):
        with pytest.raises(InputError):
            dist_pv([[0.5, 0.4], [0.5, 0.5]])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 6), st.integers(2, 5), st.integers(0, 10_000))
    def test_matches_oracle_and_nonnegative(self, n, c, seed):
        rng = np.random.default_rng(seed)
        D = rng.dirichlet(np.ones(c) * 0.5, size=n)
        got = dist_pv(D)
        assert got >= 0
        assert got == pytest.approx(naive_kl_sum(D.tolist()), abs=1e-12)
        assert dist_pv(D[::-1]) == pytest.approx(got, abs=1e-12)


class TestPVTable:
    def test_value_task(self):
        M = np.array([[1.0, 2.0, 3.0], [1.0, 4.0, 1.0]])
        t = pv_table(M, "regression", row_ids=[7, 8, 9])
        np.testing.assert_allclose(t.pv, [0.0, naive_std([2, 4]), naive_std([3, 1])], atol=1e-15)
        np.testing.assert_allclose(t.mean_prediction, [1, 3, 2])
        np.testing.assert_allclose(t.pv_coefficient, t.pv / np.array([1, 3, 2]))

    def test_identical_rows_all_zero(self):
        row = np.random.default_rng(0).normal(size=50)
        t = pv_table(np.stack([row] * 5), "regression")
        assert np.all(t.pv == 0.0)

    def test_multiclass(self):
        M = np.array([[[1, 0], [0.5, 0.5]], [[0, 1], [0.5, 0.5]]], dtype=float)
        t = pv_table(M, "multiclass")
        np.testing.assert_allclose(t.pv, [2 * math.log(2), 0.0], atol=1e-15)
        assert t.pv_coefficient is None

    def test_multiclass_bad_row_named(self):
        M = np.array([[[1, 0], [0.5, 0.4]], [[0, 1], [0.5, 0.5]]], dtype=float)
        with pytest.raises(InputError, match="row 11"):
            pv_table(M, "multiclass", row_ids=[10, 11])

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        t = pv_table(rng.normal(size=(4, 20)), "regression")
        t.to_file(tmp_path / "pv.tsv")
        back = PVTable.from_file(tmp_path / "pv.tsv")
        assert back.pv.tobytes() == t.pv.tobytes()
        assert back.mean_prediction.tobytes() == t.mean_prediction.tobytes()
        assert np.array_equal(back.row_ids, t.row_ids)
        m = pv_table(rng.dirichlet([1, 1, 1], size=(3, 5)), "multiclass")
        m.to_file(tmp_path / "m.tsv")
        back = PVTable.from_file(tmp_path / "m.tsv")
        assert back.mean_prediction.tobytes() == m.mean_prediction.tobytes()
        assert back.pv_coefficient is None


class TestPearson:
    def test_self(self):
        assert pearson([1, 5, 2], [1, 5, 2]) == 1.0

    def test_negated(self):
        assert pearson([1, 5, 2], [-1, -5, -2]) == -1.0

    def test_worked(self):
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(naive_pearson([1, 2, 3], [1, 2, 4]), abs=1e-15)

    def test_constant(self):
        with pytest.raises(UndefinedMetricError):
            pearson([1, 1, 1], [1, 2, 3])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 50))
    def test_bounds(self, seed, n):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=n), rng.normal(size=n)
        assert abs(pearson(a, b)) <= 1 + 1e-12

    def test_correlation_matrix(self):
        t = pv_table(np.random.default_rng(2).normal(size=(3, 30)), "regression")
        labels, m = correlation_matrix({"x": t, "y": t})
        assert labels == ["x", "y"]
        np.testing.assert_allclose(m, 1.0)


class TestBuckets:
    def test_uniform_hundred(self):
        v = np.arange(1, 101, dtype=float)
        s = bucketize(v, 5)
        assert s.thresholds == (20.0, 40.0, 60.0, 80.0)
        counts = np.bincount(s.assign(v), minlength=6)[1:]
        assert counts.tolist() == [20] * 5

    def test_min_goes_to_bucket_one(self):
        v = np.random.default_rng(0).gamma(2.0, size=300)
        assert bucketize(v, 5).assign(v.min()) == 1

    def test_threshold_goes_lower(self):
        s = BucketScheme((1.0, 2.0))
        assert s.assign(1.0) == 1 and s.assign(1.0 + 1e-12) == 2 and s.assign(5.0) == 3

    def test_degenerate(self):
        with pytest.raises(DegenerateBucketError):
            bucketize([1.0, 1.0, 2.0], 5)

    def test_tied_cuts_collapse(self):
        v = [0.0] * 60 + list(np.linspace(1, 2, 40))
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            s = bucketize(v, 5)
        assert len(s.thresholds) == len(set(s.thresholds)) < 4
        assert list(s.thresholds) == sorted(s.thresholds)
        assert w

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(10, 400), st.integers(2, 8))
    def test_balance(self, seed, n, K):
        v = np.random.default_rng(seed).permutation(np.arange(n, dtype=float))
        if K > n:
            return
        counts = np.bincount(bucketize(v, K).assign(v), minlength=K + 1)[1:]
        assert np.all(np.abs(counts - n / K) <= 1)


class TestDeltaRatio:
    def test_identity(self):
        t = np.array([0.1, 0.2, 0.3])
        assert delta_ratio(t, t) == 0.0

    def test_worked(self):
        assert delta_ratio([0.1, 0.3], [0.2, 0.2]) == pytest.approx(0.5, abs=1e-15)

    def test_row_mismatch(self):
        a = PVTable(np.array([1, 2]), np.array([0.1, 0.2]), np.zeros(2))
        b = PVTable(np.array([1, 3]), np.array([0.1, 0.2]), np.zeros(2))
        with pytest.raises(InputError):
            delta_ratio(a, b)

    def test_aligns_by_row_id(self):
        a = PVTable(np.array([2, 1]), np.array([0.2, 0.1]), np.zeros(2))
        b = PVTable(np.array([1, 2]), np.array([0.1, 0.2]), np.zeros(2))
        assert delta_ratio(a, b) == 0.0


@pytest.fixture(scope="module")
def universe():
    rng = np.random.default_rng(0)
    scale = rng.gamma(2.0, 0.1, size=400)
    return rng.normal(size=(120, 400)) * scale


class TestSizeSweep:
    def test_full_size_zero(self, universe):
        (p,) = size_sweep(universe, [120], resamples=5, seed=0)
        assert p.mean == 0.0 and len(p.values) == 1

    def test_decreasing(self, universe):
        pts = size_sweep(universe, [10, 30, 60], resamples=20, seed=1)
        means = [p.mean for p in pts]
        stds = [p.std for p in pts]
        assert means[0] > means[1] > means[2]
        assert stds[0] > stds[2]

    def test_too_large(self, universe):
        from actpv.errors import ConfigurationError
        with pytest.raises(ConfigurationError):
            size_sweep(universe, [121])

    def test_deterministic(self, universe):
        a = size_sweep(universe, [10], resamples=3, seed=4)
        b = size_sweep(universe, [10], resamples=3, seed=4)
        assert a[0].values == b[0].values
