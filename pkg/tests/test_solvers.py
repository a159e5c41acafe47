import math

import numpy as np
import pytest

from asyncopt import (Trace, dual_gap, make_dual_svm, make_erm, make_schedule,
                      run_aagd, run_aascd, run_aasvrg, run_accel_svrg_reference,
                      run_agd, run_apcg_reference, run_asvrg_baseline,
                      run_sgd_baseline, snapshot_update, solve_reference)
from asyncopt.momentum import ThetaSchedule, solve_theta_sc, step_size
from asyncopt.solvers import sgd_step_size
from conftest import least_squares_optimum, tiny_dataset
from asyncopt.cli import synth_dataset


def max_gap(run_a, run_b):
    return max(np.max(np.abs(a - b)) for a, b in zip(run_a.iterates,
                                                     run_b.iterates))


def max_rel_gap(run_a, run_b):
    out = 0.0
    for a, b in zip(run_a.iterates, run_b.iterates):
        scale = max(np.max(np.abs(a)), 1e-12)
        out = max(out, np.max(np.abs(a - b)) / scale)
    return out


class TestAgd:
    def test_start_at_optimum_stays(self):
        data = tiny_dataset((np.eye(3), [0.0, 0.0, 0.0]))
        p = make_erm(data, "squared")
        r = run_agd(p, 1.0 / p.L, 50, log_iterates=True)
        for it in r.iterates:
            np.testing.assert_allclose(it, 0.0, atol=0)

    def test_nc_quadratic_envelope(self):
        # f = (1/2n)||x - c||^2 via identity design; standard 1/K^2 bound
        dim = 8
        c = np.linspace(-1, 2, dim)
        data = tiny_dataset((np.eye(dim), c))
        p = make_erm(data, "squared")
        f_star = 0.0
        K = 100
        r = run_agd(p, 1.0 / p.L, K, f_star=f_star)
        bound = 2 * np.linalg.norm(c) ** 2 * p.L / (K + 2) ** 2
        assert r.trace.residuals[-1] <= bound

    def test_sc_lyapunov_contraction(self, ridge_problem):
        p, data = ridge_problem
        x_star, f_star = least_squares_optimum(p, data)
        gamma = step_size("aagd", "sc", L=p.L, tau=0)
        theta = solve_theta_sc(gamma, p.mu)
        r = run_agd(p, gamma, 200, regime="sc", f_star=f_star,
                    log_iterates=True)
        # replay to collect z as well
        coef = theta**2 / (2 * gamma) + p.mu * theta / 2
        z = np.zeros(p.dim)
        lyap_prev = None
        x = np.zeros(p.dim)
        for k in range(200):
            y = (1 - theta) * x + theta * z
            g = p.full_grad(y)
            delta = p.nonsmooth.prox(z, g, theta / gamma)
            z = z + delta
            x = theta * z + (1 - theta) * x
            lyap = p.objective(x) - f_star + coef * np.linalg.norm(z - x_star)**2
            if k >= 10:
                assert lyap <= (1 - theta) * lyap_prev * (1 + 1e-9) + 1e-15
            lyap_prev = lyap


class TestAagd:
    def test_serial_reduction_both_forms(self, ls_problem):
        p, _ = ls_problem
        gamma = step_size("aagd", "nc", L=p.L, tau=0)
        K = 200
        sched = make_schedule("serial", 0, K)
        ref = run_agd(p, gamma, K, log_iterates=True)
        for form in ("math", "uv"):
            r = run_aagd(p, gamma, sched, K, form=form, log_iterates=True)
            assert max_gap(ref, r) <= 1e-10

    def test_serial_reduction_sc(self, ridge_problem):
        p, _ = ridge_problem
        gamma = step_size("aagd", "sc", L=p.L, tau=0)
        K = 200
        sched = make_schedule("serial", 0, K)
        ref = run_agd(p, gamma, K, regime="sc", log_iterates=True)
        for form in ("math", "uv"):
            r = run_aagd(p, gamma, sched, K, regime="sc", form=form,
                         log_iterates=True)
            assert max_gap(ref, r) <= 1e-10

    @pytest.mark.parametrize("tau", [1, 2, 5])
    def test_form_equivalence_random_delays(self, ls_problem, tau):
        p, _ = ls_problem
        gamma = step_size("aagd", "nc", L=p.L, tau=tau)
        K = 500
        sched = make_schedule("uniform", tau, K, seed=31)
        rm = run_aagd(p, gamma, sched, K, form="math", log_iterates=True)
        ru = run_aagd(p, gamma, sched, K, form="uv", log_iterates=True)
        assert max_rel_gap(rm, ru) <= 1e-8

    @pytest.mark.parametrize("tau", [0, 2, 5])
    def test_nc_envelope(self, ls_problem, tau):
        p, data = ls_problem
        x_star, f_star = least_squares_optimum(p, data)
        gamma = step_size("aagd", "nc", L=p.L, tau=tau)
        K = 1000
        sched = make_schedule("fixed", tau, K, serial_warmup=True)
        r = run_aagd(p, gamma, sched, K, f_star=f_star)
        ts = ThetaSchedule("aagd", "nc")
        z0 = np.linalg.norm(x_star) ** 2   # z0 = 0
        for pos, step in enumerate(r.trace.steps):
            if step == 0:
                continue
            bound = ts.theta(step - 1) ** 2 / (2 * gamma) * z0
            assert r.trace.residuals[pos] <= bound

    def test_sc_envelope_with_delay(self, ridge_problem):
        p, data = ridge_problem
        x_star, f_star = least_squares_optimum(p, data)
        tau = 2
        gamma = step_size("aagd", "sc", L=p.L, tau=tau)
        theta = solve_theta_sc(gamma, p.mu)
        K = 400
        sched = make_schedule("fixed", tau, K, serial_warmup=True)
        r = run_aagd(p, gamma, sched, K, regime="sc", f_star=f_star)
        init = (p.objective(np.zeros(p.dim)) - f_star
                + (theta**2 / (2 * gamma) + p.mu * theta / 2)
                * np.linalg.norm(x_star) ** 2)
        for pos, step in enumerate(r.trace.steps):
            if step <= 10:
                continue
            bound = (1 - theta) ** step * init
            assert r.trace.residuals[pos] <= bound * (1 + 1e-9)

    def test_horizon_too_short(self, ls_problem):
        p, _ = ls_problem
        sched = make_schedule("fixed", 1, 10)
        with pytest.raises(ValueError, match="horizon"):
            run_aagd(p, 0.1, sched, 20)


class TestAascd:
    def test_serial_reduction(self, svm_toy):
        p = svm_toy.base
        gamma = step_size("aascd", "nc", L_c=p.L_c, n=p.dim, tau=0)
        K = 300
        sched = make_schedule("serial", 0, K)
        ref = run_apcg_reference(p, gamma, K, seed=3, log_iterates=True)
        for form in ("naive", "efficient"):
            r = run_aascd(p, gamma, sched, K, seed=3, form=form,
                          log_iterates=True)
            assert max_gap(ref, r) <= 1e-10

    @pytest.mark.parametrize("tau", [1, 2, 5])
    def test_naive_vs_efficient(self, tau):
        data = synth_dataset(40, 12, 0.6, None, seed=8, normalize=True)
        svm = make_dual_svm(data, lam=1.0 / 40)
        p = svm.base
        gamma = step_size("aascd", "nc", L_c=p.L_c, n=p.dim, tau=tau)
        K = 300
        sched = make_schedule("uniform", tau, K, seed=17)
        rn = run_aascd(p, gamma, sched, K, seed=5, form="naive",
                       log_iterates=True)
        re = run_aascd(p, gamma, sched, K, seed=5, form="efficient",
                       log_iterates=True)
        assert max_rel_gap(rn, re) <= 1e-8

    def test_paper_variants_share_zero_delay(self, svm_toy):
        p = svm_toy.base
        gamma = step_size("aascd", "nc", L_c=p.L_c, n=p.dim, tau=0)
        sched = make_schedule("serial", 0, 100)
        base = run_aascd(p, gamma, sched, 100, seed=1, form="naive",
                         log_iterates=True)
        for variant in ("appendix", "maintext"):
            r = run_aascd(p, gamma, sched, 100, seed=1, form="naive",
                          comp_variant=variant, log_iterates=True)
            assert max_gap(base, r) <= 1e-12

    def test_n_equal_one_matches_full_gradient_method(self):
        data = tiny_dataset(([[1.0], [0.5], [-0.75]], [1.0, -0.3, 0.4]))
        p = make_erm(data, "squared", lam=0.0)
        assert p.dim == 1
        gamma = 0.5 / p.L_c
        K = 120
        sched = make_schedule("serial", 0, K)
        r_cd = run_aascd(p, gamma, sched, K, seed=9, form="naive",
                         log_iterates=True)
        r_gd = run_aagd(p, gamma, sched, K, form="math", log_iterates=True)
        assert max_gap(r_cd, r_gd) <= 1e-12

    def test_tau_bound_enforced(self, svm_toy):
        p = svm_toy.base
        sched = make_schedule("fixed", 7, 50)
        with pytest.raises(ValueError, match="sqrt"):
            run_aascd(p, 0.1, sched, 50, seed=0)

    def test_non_separable_h_rejected(self, svm_toy, monkeypatch):
        p = svm_toy.base
        monkeypatch.setattr(p.nonsmooth, "separable", False)
        sched = make_schedule("serial", 0, 10)
        with pytest.raises(ValueError, match="separable"):
            run_aascd(p, 0.1, sched, 10, seed=0)

    def test_nc_certificate_seed_average(self):
        # E[F(x^{K+1})] - F* over (theta^K)^2 + (n^2/2g) E||z - x*||^2
        # bounded by the same expression at the start, 2x sampling slack
        data = synth_dataset(16, 16, 1.0, None, seed=21)
        p = make_erm(data, "squared", lam=0.0)
        n = p.dim
        x_star, f_star = least_squares_optimum(p, data)
        tau = 2
        gamma = step_size("aascd", "nc", L_c=p.L_c, n=n, tau=tau)
        ts = ThetaSchedule("aascd", "nc", n=n)
        K = 400
        sched = make_schedule("uniform", tau, K, seed=2)
        checkpoints = [50, 100, 200, 400]
        sums = {c: 0.0 for c in checkpoints}
        seeds = 40
        f0 = p.objective(np.zeros(n))
        for seed in range(seeds):
            r = run_aascd(p, gamma, sched, K, seed=seed, form="efficient",
                          log_iterates=True, record_every=K)
            for c in checkpoints:
                # iterates[c] = x^{c}; z log aligns with steps 1..K
                x_c = r.iterates[c]
                z_c = r.aux["z_iterates"][c - 1]
                lhs = ((p.objective(x_c) - f_star) / ts.theta(c - 1) ** 2
                       + n**2 / (2 * gamma) * np.linalg.norm(z_c - x_star) ** 2)
                sums[c] += lhs / seeds
        rhs = (f0 - f_star) / ts.theta(-1) ** 2 \
            + n**2 / (2 * gamma) * np.linalg.norm(x_star) ** 2
        for c in checkpoints:
            assert sums[c] <= 2 * rhs


class TestAasvrg:
    def test_serial_reduction_engines(self, ridge_problem):
        p, _ = ridge_problem
        gamma = step_size("aasvrg", "nc", L=p.L_comp, tau=0)
        S, m = 3, p.n_components
        sched = make_schedule("serial", 0, S * m)
        ref = run_accel_svrg_reference(p, gamma, S, seed=5)
        for engine in ("python", "numba"):
            r = run_aasvrg(p, gamma, sched, S, seed=5, engine=engine)
            assert np.max(np.abs(r.x - ref.x)) <= 1e-10

    def test_sc_serial_reduction(self, ridge_problem):
        p, _ = ridge_problem
        gamma = step_size("aasvrg", "sc", L=p.L_comp, tau=0)
        S = 3
        sched = make_schedule("serial", 0, S * p.n_components)
        ref = run_accel_svrg_reference(p, gamma, S, seed=7, regime="sc")
        r = run_aasvrg(p, gamma, sched, S, seed=7, regime="sc", engine="numba")
        assert np.max(np.abs(r.x - ref.x)) <= 1e-10

    @pytest.mark.parametrize("tau", [1, 3])
    def test_engines_agree_under_delay(self, ridge_problem, tau):
        p, _ = ridge_problem
        gamma = step_size("aasvrg", "nc", L=p.L_comp, tau=tau)
        S, m = 3, 50
        sched = make_schedule("uniform", tau, S * m, seed=13)
        rp = run_aasvrg(p, gamma, sched, S, seed=5, m=m, engine="python")
        rn = run_aasvrg(p, gamma, sched, S, seed=5, m=m, engine="numba")
        assert np.max(np.abs(rp.x - rn.x)) <= 1e-12

    @pytest.mark.parametrize("tau", [0, 1, 3])
    def test_hvp_exact_on_quadratic(self, ridge_problem, tau):
        p, _ = ridge_problem
        gamma = step_size("aasvrg", "nc", L=p.L_comp, tau=tau)
        S, m = 3, 60
        sched = make_schedule("uniform", tau, S * m, seed=19)
        re = run_aasvrg(p, gamma, sched, S, seed=4, m=m, grad_mode="exact")
        rh = run_aasvrg(p, gamma, sched, S, seed=4, m=m, grad_mode="hvp")
        assert np.max(np.abs(re.x - rh.x)) <= 1e-10

    def test_hvp_engines_agree(self, logistic_problem):
        p, _ = logistic_problem
        gamma = step_size("aasvrg", "nc", L=p.L_comp, tau=2)
        S, m = 2, 40
        sched = make_schedule("fixed", 2, S * m)
        rp = run_aasvrg(p, gamma, sched, S, seed=3, m=m, grad_mode="hvp",
                        engine="python")
        rn = run_aasvrg(p, gamma, sched, S, seed=3, m=m, grad_mode="hvp",
                        engine="numba")
        assert np.max(np.abs(rp.x - rn.x)) <= 1e-12

    def test_grad_eval_accounting(self, ridge_problem):
        p, _ = ridge_problem
        n = p.n_components
        S, m = 4, n
        sched = make_schedule("serial", 0, S * m)
        r = run_aasvrg(p, 0.01, sched, S, seed=0)
        # n for the initial snapshot, then m inner + n snapshot per epoch
        want = [n + s * (m + n) for s in range(S + 1)]
        assert r.trace.grad_evals == want

    def test_sc_needs_mu(self, ls_problem):
        p, _ = ls_problem
        sched = make_schedule("serial", 0, 100)
        with pytest.raises(ValueError, match="strongly convex"):
            run_aasvrg(p, 0.01, sched, 1, seed=0, regime="sc")

    def test_nc_certificate_seed_average(self):
        data = synth_dataset(24, 12, 1.0, None, seed=22)
        p = make_erm(data, "squared", lam=0.0)
        n = p.n_components
        x_star, f_star = least_squares_optimum(p, data)
        f0 = p.objective(np.zeros(p.dim))
        tau = 2
        gamma = step_size("aasvrg", "nc", L=p.L_comp, tau=tau)
        S = 6  # run epochs 0..5, certify the last
        sched = make_schedule("uniform", tau, S * n, seed=4)
        th_S = 2.0 / ((S - 1) + 4.0)
        lhs_sum = 0.0
        seeds = 40
        for seed in range(seeds):
            r = run_aasvrg(p, gamma, sched, S, seed=seed, dump_last_epoch=True)
            inner = r.aux["inner_iterates"]  # x^S_0 .. x^S_m
            lhs = (p.objective(inner[n]) - f_star) + (0.5 + th_S) * sum(
                p.objective(inner[k]) - f_star for k in range(1, n))
            lhs_sum += lhs / seeds
        rhs = 2 * n * th_S**2 * (f0 - f_star) \
            + th_S**2 / (2 * gamma) * np.linalg.norm(x_star) ** 2
        assert lhs_sum <= 2 * rhs


class TestSnapshotUpdate:
    def test_nc_mean(self):
        pts = [np.array([0.0]), np.array([3.0]), np.array([6.0])]
        np.testing.assert_allclose(snapshot_update(pts, "nc"), [3.0])

    def test_constant_iterates(self):
        pts = [np.array([2.0, -1.0])] * 4
        np.testing.assert_allclose(
            snapshot_update(pts, "sc", theta1=0.25, mu=0.5, gamma=0.5),
            [2.0, -1.0])

    def test_sc_weighted_hand_value(self):
        # theta3 = 2: weights (1, 2) -> (0 + 2*1)/3
        pts = [np.array([0.0]), np.array([1.0])]
        out = snapshot_update(pts, "sc", theta1=0.5, mu=1.0, gamma=0.5)
        np.testing.assert_allclose(out, [2.0 / 3.0])

    def test_maintext_variant(self):
        pts = [np.array([0.0]), np.array([1.0])]
        out = snapshot_update(pts, "sc", theta1=1.0, mu=1.0, gamma=0.5,
                              variant="maintext")
        np.testing.assert_allclose(out, [2.0 / 3.0])


class TestBaselines:
    def test_asvrg_tau0_monotone_epochs(self, ridge_problem):
        p, data = ridge_problem
        _, f_star = least_squares_optimum(p, data)
        sched = make_schedule("serial", 0, 20 * 2 * p.n_components)
        r = run_asvrg_baseline(p, sched, 10, seed=1, f_star=f_star)
        res = r.trace.residuals
        assert all(res[i + 1] <= res[i] * (1 + 1e-9) for i in range(len(res) - 1))

    def test_asvrg_grad_eval_accounting(self, ridge_problem):
        p, _ = ridge_problem
        n = p.n_components
        sched = make_schedule("fixed", 2, 3 * 2 * n)
        r = run_asvrg_baseline(p, sched, 3, seed=1)
        want = [n + s * (2 * n + n) for s in range(4)]
        assert r.trace.grad_evals == want

    def test_sgd_step_rules(self):
        assert sgd_step_size(("decaying", 0.3, 50.0), 0) == pytest.approx(0.3)
        assert sgd_step_size(("decaying", 0.3, 50.0), 150) == pytest.approx(0.15)
        assert sgd_step_size(("constant", 0.02), 999) == 0.02

    def test_sgd_descends(self, ridge_problem):
        p, data = ridge_problem
        _, f_star = least_squares_optimum(p, data)
        K = 4000
        sched = make_schedule("fixed", 1, K)
        r = run_sgd_baseline(p, sched, K, seed=2,
                             step_rule=("constant", 0.3 / p.L_comp),
                             f_star=f_star)
        tail = np.mean(r.trace.residuals[-5:])
        assert tail < r.trace.residuals[0] * 0.2


class TestDualGap:
    def test_gap_at_zero_is_primal_value(self, svm_toy):
        alpha = np.zeros(svm_toy.data.n)
        want = svm_toy.primal_objective(np.zeros(svm_toy.data.dim))
        assert dual_gap(svm_toy, alpha) == pytest.approx(want, rel=1e-12)
        assert dual_gap(svm_toy, alpha) >= 0

    def test_infeasible_rejected(self, svm_toy):
        alpha = svm_toy.data.labels * 2.0
        with pytest.raises(ValueError, match="box"):
            dual_gap(svm_toy, alpha)

    def test_gap_shrinks_along_aascd(self, svm_toy):
        p = svm_toy.base
        gamma = step_size("aascd", "sc", L_c=p.L_c, n=p.dim, mu=p.mu, tau=1)
        K = 40 * p.dim
        sched = make_schedule("fixed", 1, K)
        r = run_aascd(p, gamma, sched, K, seed=3, regime="sc")
        assert dual_gap(svm_toy, r.x) < 0.25 * dual_gap(
            svm_toy, np.zeros(p.dim))


class TestDeterminismAndTrace:
    def test_bit_identical_traces(self, ridge_problem):
        p, _ = ridge_problem
        sched = make_schedule("uniform", 3, 300, seed=9)
        a = run_aasvrg(p, 0.02, sched, 3, seed=11, m=100)
        b = run_aasvrg(p, 0.02, sched, 3, seed=11, m=100)
        assert a.trace.objectives == b.trace.objectives
        assert a.trace.csv_bytes() == b.trace.csv_bytes()
        c = run_aasvrg(p, 0.02, sched, 3, seed=12, m=100)
        assert a.trace.objectives != c.trace.objectives

    def test_csv_roundtrip(self, tmp_path):
        tr = Trace()
        tr.record(0, 1.5, 0, f_star=0.25)
        tr.record(10, 0.5, 100, f_star=0.25, seconds=1.25)
        path = tmp_path / "t.csv"
        tr.to_csv(path)
        back = Trace.from_csv(path)
        assert back.steps == tr.steps
        assert back.objectives == tr.objectives
        assert back.residuals == tr.residuals
        assert back.grad_evals == tr.grad_evals

    def test_strictly_increasing_steps(self):
        tr = Trace()
        tr.record(0, 1.0, 0)
        with pytest.raises(ValueError):
            tr.record(0, 0.5, 1)


class TestSolveReference:
    def test_interpolating_least_squares(self):
        data = tiny_dataset((np.eye(4), [1.0, 2.0, 3.0, 4.0]))
        p = make_erm(data, "squared")
        x_star, f_star, cert = solve_reference(p, tol=1e-12)
        np.testing.assert_allclose(x_star, [1, 2, 3, 4], rtol=1e-8)
        assert f_star <= 1e-16
        assert cert <= 1e-12

    def test_ridge_certificate(self, ridge_problem):
        p, data = ridge_problem
        x_star, f_star, cert = solve_reference(p, tol=1e-12)
        want_x, want_f = least_squares_optimum(p, data)
        assert cert <= 1e-12
        assert f_star == pytest.approx(want_f, rel=1e-12, abs=1e-14)
