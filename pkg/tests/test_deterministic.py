import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from bubblesim import deterministic as det
from bubblesim.errors import DegenerateCoupling, NotSupercritical
from bubblesim.market import SimState
from bubblesim.params import ModelParams

P = ModelParams()


def brute_fixed_point(params, kappa, lo=-0.9, hi=0.9):
    """Independent root of s - c*H(s) = 0 on a bracket, no polynomial algebra."""
    c = kappa / (params.p - kappa)

    def g(s):
        num = (1 + s) ** 2 + 4 * params.x**2
        den = (1 + s) * (1 - s) + 4 * params.x * (1 - params.x)
        return s - c * (params.r_f + params.r * num / den)

    return brentq(g, lo, hi, xtol=1e-15, rtol=1e-15)


def fd_jacobian(params, kappa, s, h, eps=1e-7):
    """Finite-difference Jacobian of one frozen-wealth deterministic step."""

    def f(s_, h_):
        st_ = SimState(0, 1.0, s_, h_, kappa, 1.0, 1.0, 0)
        nxt = det.deterministic_step(st_, params, kappa)
        return np.array([nxt.s, nxt.h])

    cols = [(f(s + eps, h) - f(s - eps, h)) / (2 * eps), (f(s, h + eps) - f(s, h - eps)) / (2 * eps)]
    return np.column_stack(cols)


class TestDeterministicStep:
    def test_at_rest(self):
        st_ = SimState.initial(P)
        nxt = det.deterministic_step(st_, P, P.mu_kappa)
        assert nxt.s == 0.0
        assert nxt.price == pytest.approx(1.0 + 8e-5 + (1.36 / 1.84) * 1.6e-4, rel=1e-14)

    def test_fixed_point_is_preserved(self):
        fp = det.find_fixed_points(P, 0.18)[0]
        st_ = SimState(0, 1.0, fp.s_star, fp.h_star, 0.18, 1.0, 1.0, 0)
        nxt = det.deterministic_step(st_, P, 0.18)
        assert abs(nxt.s - fp.s_star) <= 1e-12
        assert abs(nxt.h - fp.h_star) <= 1e-12

    @pytest.mark.parametrize("s", [-0.3, 0.01, 0.2])
    def test_growth_without_momentum(self, s):
        st_ = SimState(0, 1.0, s, 0.0, 0.21, 1.0, 1.0, 0)
        assert det.deterministic_step(st_, P, 0.21).s == pytest.approx(1.01 * s, rel=1e-14)

    def test_saturates_inside_domain(self):
        st_ = SimState(0, 1.0, 0.95, 0.5, 0.4, 1.0, 1.0, 0)
        for _ in range(50):
            st_ = det.deterministic_step(st_, P, 0.4)
            assert -1.0 <= st_.s <= 1.0


class TestFixedPoints:
    def test_no_coupling(self):
        fps = det.find_fixed_points(P, 0.0)
        assert len(fps) == 1
        assert fps[0].s_star == 0.0
        assert fps[0].h_star == pytest.approx(8e-5 + 1.6e-4 * 1.36 / 1.84, rel=1e-14)

    def test_default_parameters(self):
        fps = det.find_fixed_points(P, P.mu_kappa)
        admissible = [f for f in fps if f.admissible]
        assert len(admissible) == 1
        s_star = admissible[0].s_star
        assert s_star == pytest.approx(brute_fixed_point(P, P.mu_kappa), abs=1e-14)
        assert s_star == pytest.approx(9.799003e-3, rel=1e-6)
        assert 0.9e-2 < s_star < 1.35e-2
        assert all(abs(f.s_star) > 1 for f in fps if not f.admissible)
        assert len(fps) == 3

    def test_no_drift_sources(self):
        q = P.replace(r=0.0, r_f=0.0)
        fps = det.find_fixed_points(q, 0.15)
        assert (fps[0].s_star, fps[0].h_star) == (pytest.approx(0.0, abs=1e-15), 0.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateCoupling):
            det.find_fixed_points(P, P.p)

    def test_approximate_estimate(self):
        # weak coupling keeps s* small, so H* stays near its value at s = 0
        fp = det.find_fixed_points(P, 0.1)[0]
        h_est = P.r_f + (1 + 4 * P.x**2) / (1 + 4 * P.x - 4 * P.x**2) * P.r
        assert fp.s_star == pytest.approx(0.1 / (P.p - 0.1) * fp.h_star, rel=1e-12)
        assert fp.h_star == pytest.approx(h_est, rel=1e-3)

    @given(st.one_of(st.floats(0.0, 0.195), st.floats(0.205, 0.6)), st.floats(0.25, 4.0))
    @settings(max_examples=60)
    def test_residuals(self, kappa, ratio):
        for fp in det.find_fixed_points(P, kappa, wealth_ratio=ratio):
            r1, r2 = det.fixed_point_residuals(fp.s_star, fp.h_star, P, kappa, ratio)
            scale = max(1.0, abs(fp.h_star))
            assert abs(r1) <= 1e-10 * scale and abs(r2) <= 1e-10 * scale


class TestStability:
    def test_subcritical_stable(self):
        fp = det.find_fixed_points(P, 0.18)[0]
        stab, radius = det.classify_stability(fp, P, 0.18)
        oracle = np.max(np.abs(np.linalg.eigvals(fd_jacobian(P, 0.18, fp.s_star, fp.h_star))))
        assert stab == "stable"
        assert radius == pytest.approx(oracle, abs=1e-6)
        assert radius < 1

    def test_supercritical_unstable(self):
        fp = det.find_fixed_points(P, 0.21)[0]
        assert fp.admissible
        assert fp.stability == "unstable"
        assert fp.spectral_radius > 1

    def test_marginal_at_critical_coupling(self):
        q = P.replace(r=0.0, r_f=0.0)
        stab, radius = det.classify_stability(det.FixedPoint(0.0, 0.0), q, q.p)
        assert stab == "marginal"
        assert radius == pytest.approx(1.0, abs=1e-12)

    @given(st.floats(-0.5, 0.5), st.floats(-0.01, 0.01), st.floats(0.05, 0.3))
    @settings(max_examples=40)
    def test_jacobian_matches_finite_differences(self, s, h, kappa):
        if abs(kappa * (s + h)) > P.p:  # keep both probabilities interior
            return
        analytic = det.reduced_jacobian(s, h, P, kappa)
        assert np.allclose(analytic, fd_jacobian(P, kappa, s, h), atol=1e-6)


class TestTrajectories:
    def test_subcritical_convergence(self):
        fp = det.find_fixed_points(P, 0.18)[0]
        path = det.deterministic_trajectory(P, 0.18, 3000, s0=0.05, freeze_wealth_ratio=True)
        err = path.s - fp.s_star
        assert abs(err[-1]) < 1e-10
        # linear contraction: |err_t| is bounded by a multiple of rho**t down to roundoff
        radius = fp.spectral_radius
        steps = np.arange(len(err))
        assert np.all(np.abs(err) <= 10 * abs(err[0]) * radius**steps + 1e-14)
        env = np.array([np.max(np.abs(err[i : i + 50])) for i in range(0, 500, 50)])
        rate = np.exp(np.mean(np.diff(np.log(env))) / 50)
        assert rate == pytest.approx(radius, abs=5e-3)

    def test_supercritical_divergence(self):
        fp = det.find_fixed_points(P, 0.21)[0]
        path = det.deterministic_trajectory(P, 0.21, 500, s0=0.05)
        dev = np.abs(path.s - fp.s_star)
        first_sat = int(np.argmax(np.abs(path.s) > 0.9))
        assert first_sat > 0
        assert np.all(np.diff(dev[: first_sat // 2]) > 0)
        assert np.all(np.abs(path.s) <= 1.0)

    def test_log_price_convex_while_growing(self):
        path = det.deterministic_trajectory(P, 0.21, 60, s0=0.01)
        d2 = np.diff(np.log(path.price), 2)
        assert np.all(d2[:50] > 0)

    def test_unfrozen_path_tracks_moving_fixed_point(self):
        path = det.deterministic_trajectory(P, 0.18, 5000, s0=0.05)
        ratio = path.w_noise[-1] / path.w_rational[-1]
        fp = det.find_fixed_points(P, 0.18, wealth_ratio=ratio)[0]
        assert ratio > 1.2
        assert abs(path.s[-1] - fp.s_star) < 1e-6


class TestSuperExponential:
    def test_constant_cases(self):
        t = np.arange(50)
        assert np.all(det.predict_superexp_logprice(0.0, 1.05, 1.0, 2.0, t) == math.log(2.0))
        assert np.all(det.predict_superexp_logprice(1e-3, 1.0, 1.0, 2.0, t) == math.log(2.0))

    def test_value(self):
        v = det.predict_superexp_logprice(1e-3, 1.01, 1.0, 1.0, 100)
        assert float(v) == pytest.approx(1e-3 * (1.01**100 - 1), rel=1e-14)
        assert float(v) == pytest.approx(1.7048e-3, rel=1e-4)

    def test_price_coupling_order_one(self):
        assert det.price_coupling(0.3, 1.0, 0.0) == pytest.approx(2 / 1.84)


class TestOU:
    def test_moments(self):
        assert det.ou_stationary_moments(P.replace(sigma_kappa=0.0)) == (P.mu_kappa, 0.0)
        mean, std = det.ou_stationary_moments(P.replace(sigma_kappa=0.00938, eta=0.1151))
        assert mean == P.mu_kappa
        assert std == pytest.approx(0.00938 / math.sqrt(0.2302), rel=1e-12)
        assert std == pytest.approx(0.0195, abs=1e-4)
        assert det.ou_stationary_moments(P)[1] == pytest.approx(0.1 * P.p, rel=1e-12)

    def test_reversion_time(self):
        assert det.ou_reversion_time(P.mu_kappa + 0.04, P) == pytest.approx(20.0, rel=1e-12)
        assert det.ou_reversion_time(P.p, P) == 0.0
        q = P.replace(eta=0.1151)
        assert det.ou_reversion_time(q.mu_kappa + 0.008, q) == pytest.approx(math.log(2) / 0.1151, rel=1e-12)
        assert det.ou_reversion_time(q.mu_kappa + 0.008, q) == pytest.approx(6.02, abs=0.01)

    def test_reversion_time_requires_supercritical(self):
        with pytest.raises(NotSupercritical):
            det.ou_reversion_time(0.19, P)
        with pytest.raises(NotSupercritical):
            det.ou_reversion_time(0.3, P.replace(mu_kappa=0.25))


class TestRationalOnly:
    def test_no_dividend(self):
        assert det.rational_only_price(2.0, 0.0, P) == 2.0 * (1 + P.r_f)

    def test_value(self):
        q = P.replace(r_f=0.01)
        assert det.rational_only_price(100.0, 1.0, q) == pytest.approx(101 + 0.3 / 0.7, rel=1e-14)

    def test_gordon_shapiro_growth(self):
        q = P.replace(r_f=0.01)
        g, d0, p0 = 0.004, 0.5, 3.0
        price = p0
        for t in range(1, 4001):
            price = det.rational_only_price(price, d0 * (1 + g) ** t, q)
        limit = p0 + q.x / (1 - q.x) * d0 * (1 + g) / (q.r_f - g)
        assert price / (1 + q.r_f) ** 4000 == pytest.approx(limit, rel=1e-6)
