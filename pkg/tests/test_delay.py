import numpy as np
from hypothesis import given, settings, strategies as st

from asyncopt.delay import (component_stream, load_trace_schedule,
                            make_schedule, measure_overlap, rand_index,
                            rand_index_nb, splitmix64, splitmix64_nb,
                            verify_schedule)


class TestStreams:
    def test_python_numba_twins_agree(self):
        for seed in (0, 7, 123456789):
            for k in (0, 1, 17, 2**31, 2**60):
                assert splitmix64(seed, k) == int(splitmix64_nb(seed, k))
                assert rand_index(seed, k, 97) == int(rand_index_nb(seed, k, 97))

    def test_counter_based_order_independence(self):
        a = [rand_index(5, k, 10) for k in range(100)]
        b = [rand_index(5, k, 10) for k in reversed(range(100))]
        assert a == list(reversed(b))

    def test_component_stream_uniformish(self):
        s = component_stream(3, 200000, 8)
        counts = np.bincount(s, minlength=8) / len(s)
        assert np.all(np.abs(counts - 1 / 8) < 0.01)


class TestSchedules:
    def test_fixed_examples(self):
        s = make_schedule("fixed", 2, 10)
        assert s.j(5) == 3
        assert s.j(1) == 0
        assert s.j(0) == 0

    def test_serial_identity(self):
        s = make_schedule("serial", 0, 50)
        assert all(s.j(k) == k for k in range(50))

    def test_serial_warmup(self):
        s = make_schedule("fixed", 3, 20, serial_warmup=True)
        assert [s.j(k) for k in range(5)] == [0, 1, 2, 0, 1]

    def test_uniform_window_and_mean(self):
        tau, n = 3, 100000
        s = make_schedule("uniform", tau, n, seed=7)
        delays = s.delays()
        assert delays.min() >= 0 and delays.max() <= tau
        # for k >= tau the delay is uniform on {0..tau}: mean tau/2,
        # var ((tau+1)^2 - 1)/12; 3-sigma band on the empirical mean
        tail = delays[tau:]
        var = ((tau + 1) ** 2 - 1) / 12
        band = 3 * np.sqrt(var / len(tail))
        assert abs(tail.mean() - tau / 2) < band

    def test_reproducible(self):
        a = make_schedule("uniform", 5, 1000, seed=42).delays()
        b = make_schedule("uniform", 5, 1000, seed=42).delays()
        assert np.array_equal(a, b)
        c = make_schedule("uniform", 5, 1000, seed=43).delays()
        assert not np.array_equal(a, c)

    @given(st.sampled_from(["serial", "fixed", "uniform"]),
           st.integers(min_value=0, max_value=7),
           st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=150, deadline=None)
    def test_window_invariant(self, kind, tau, seed):
        s = make_schedule(kind, tau, 64, seed=seed,
                          serial_warmup=bool(seed % 2))
        for k in range(64):
            j = s.j(k)
            assert max(0, k - tau) <= j <= k

    def test_trace_roundtrip_and_violation(self, tmp_path):
        path = tmp_path / "sched.txt"
        path.write_text("0\n0\n3\n")
        s = load_trace_schedule(path, tau=1)
        rep = verify_schedule(s)
        assert rep.violations == 1 and rep.first_violation == 2  # j=3 > k=2

    def test_verify_fixed(self):
        rep = verify_schedule(make_schedule("fixed", 2, 100))
        assert rep.max_delay == 2 and rep.violations == 0

    def test_verify_serial_histogram(self):
        rep = verify_schedule(make_schedule("serial", 0, 40))
        assert rep.histogram[0] == 40


class TestOverlap:
    def test_dense_updates_min_tau_k(self):
        tau, n, dim = 4, 60, 5
        sched = make_schedule("fixed", tau, n)
        updates = [np.arange(dim) for _ in range(n)]
        stats = measure_overlap(updates, sched, dim=dim)
        want = np.mean([min(tau, k) for k in range(n)])
        np.testing.assert_allclose(stats.mean_counts, want, rtol=1e-12)
        assert stats.delta_hat == 1.0

    def test_iid_supports_expectation(self):
        # Bernoulli(0.1) supports, fixed tau = 10: mean overlap ~ 1.0
        rng = np.random.default_rng(0)
        beta, tau, n, dim = 0.1, 10, 100000, 20
        updates = [np.nonzero(rng.random(dim) < beta)[0] for _ in range(n)]
        sched = make_schedule("fixed", tau, n)
        stats = measure_overlap(updates, sched, dim=dim)
        assert np.all(np.abs(stats.mean_counts - beta * tau) < 0.2 * beta * tau)
        assert abs(stats.delta_hat - beta) < 0.02

    def test_round_robin_pigeonhole(self):
        dim, tau, n = 10, 4, 1000
        updates = [np.array([k % dim]) for k in range(n)]
        sched = make_schedule("fixed", tau, n)
        stats = measure_overlap(updates, sched, dim=dim)
        # each window of tau < dim consecutive steps hits a coordinate at most once
        assert np.all(stats.mean_counts <= 1.0)
        assert np.all(stats.mean_counts > 0.0)

    def test_sparse_overlap_below_dense(self):
        # the delay effect shrinks with sparsity: same schedule, smaller
        # per-coordinate overlap for sparse supports
        rng = np.random.default_rng(3)
        dim, tau, n = 20, 6, 5000
        sched = make_schedule("fixed", tau, n)
        dense = [np.arange(dim) for _ in range(n)]
        sparse = [np.nonzero(rng.random(dim) < 0.1)[0] for _ in range(n)]
        d = measure_overlap(dense, sched, dim=dim)
        s = measure_overlap(sparse, sched, dim=dim)
        assert s.mean_counts.mean() < 0.25 * d.mean_counts.mean()
        assert s.delta_hat < d.delta_hat
