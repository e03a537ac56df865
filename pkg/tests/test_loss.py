import mpmath
import numpy as np
import pytest
from scipy.special import ndtr

from trajqr.loss import (LossParams, batch_objective, corrected_derivatives, corrected_objective,
                         rho_corrected, rho_smooth, rho_tau, vK_derivative)
from trajqr.model import ModelConfig, stage_one
from trajqr.rng import laplace, normal, stream

mpmath.mp.dps = 40
PHI1 = float(mpmath.ncdf(1))
PHI0_PDF = float(mpmath.npdf(0))


class TestCheckLoss:
    def test_origin(self):
        for tau in (0.1, 0.5, 0.9):
            assert rho_tau(0.0, tau) == 0.0

    def test_positive(self):
        assert rho_tau(1.0, 0.5) == 0.5

    def test_negative(self):
        assert rho_tau(-2.0, 0.3) == pytest.approx(1.4, abs=1e-15)


class TestSmoothLoss:
    def test_origin(self):
        for tau, h in [(0.2, 0.1), (0.7, 2.0)]:
            assert rho_smooth(0.0, LossParams(tau, h)) == 0.0

    def test_small_h_limit(self):
        assert rho_smooth(1.0, LossParams(0.5, 0.01)) == pytest.approx(0.5, abs=1e-12)

    def test_phi_one(self):
        assert PHI1 == pytest.approx(0.8413447460685429, abs=1e-15)
        expected = 0.8 * (-0.5 + PHI1)
        assert rho_smooth(0.8, LossParams(0.5, 0.8)) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.27308, abs=1e-5)

    def test_converges_to_check_loss(self):
        v = np.linspace(-10, 10, 4001)
        sups = []
        for h in (0.4, 0.2, 0.1):
            gap = np.abs(rho_smooth(v, LossParams(0.3, h)) - rho_tau(v, 0.3))
            sups.append(gap.max())
            # sup_v |v| (Phi(-|v|/h)) = h * sup_u u Phi(-u) < 0.17 h
            assert gap.max() <= 0.17 * h
        assert sups[0] > sups[1] > sups[2]


class TestVKDerivative:
    def test_first_at_zero(self):
        assert vK_derivative(0.0, 1.0, 1) == 0.5

    def test_second_at_zero(self):
        assert vK_derivative(0.0, 0.8, 2) == pytest.approx(2.5 * PHI0_PDF, rel=1e-14)
        assert 2.5 * PHI0_PDF == pytest.approx(0.9973557, abs=1e-7)

    @pytest.mark.parametrize("j", [1, 2, 3, 4])
    @pytest.mark.parametrize("h", [0.4, 0.8, 1.5])
    def test_matches_high_precision_derivative(self, j, h):
        def f(v):
            return v * mpmath.ncdf(v / h)

        for v in np.linspace(-5, 5, 41):
            exact = float(mpmath.diff(f, mpmath.mpf(float(v)), j))
            got = vK_derivative(v, h, j)
            assert got == pytest.approx(exact, rel=1e-6, abs=1e-12)

    @pytest.mark.parametrize("j", [1, 2, 3, 4])
    def test_matches_central_differences(self, j):
        h, step = 0.8, 1e-5
        v = np.linspace(-5, 5, 101)

        def prev(x):
            return x * ndtr(x / h) if j == 1 else vK_derivative(x, h, j - 1)

        fd = (prev(v + step) - prev(v - step)) / (2 * step)
        np.testing.assert_allclose(vK_derivative(v, h, j), fd, rtol=1e-6, atol=1e-8)


class TestCorrectedLoss:
    def test_sigma_zero_is_smooth(self):
        xi = np.linspace(-4, 4, 33)
        p0 = LossParams(0.3, 0.7, 0.0)
        np.testing.assert_array_equal(rho_corrected(xi, p0), rho_smooth(xi, p0))

    def test_value_at_zero(self):
        expected = -0.5 * (2 / 0.8) * PHI0_PDF
        assert rho_corrected(0.0, LossParams(0.5, 0.8, 1.0)) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(-0.4986779, abs=1e-7)

    def test_derivatives_against_differences(self):
        xi = np.linspace(-6, 6, 61)
        step = 1e-5
        for tau, h, s2 in [(0.1, 0.8, 1.0), (0.5, 0.4, 0.25), (0.9, 1.3, 2.0)]:
            val, g1, g2 = corrected_derivatives(xi, tau, h, s2)
            up, g1u, _ = corrected_derivatives(xi + step, tau, h, s2)
            dn, g1d, _ = corrected_derivatives(xi - step, tau, h, s2)
            np.testing.assert_allclose(g1, (up - dn) / (2 * step), rtol=1e-6, atol=1e-8)
            np.testing.assert_allclose(g2, (g1u - g1d) / (2 * step), rtol=1e-6, atol=1e-8)
            np.testing.assert_allclose(val, rho_corrected(xi, LossParams(tau, h, s2)), rtol=1e-14)

    def test_tails_finite(self):
        for h in (0.01, 0.8):
            v = np.array([-700 * h, -100 * h, -41 * h, 41 * h, 100 * h, 700 * h, 1e300, -1e300])
            val, g1, g2 = corrected_derivatives(v, 0.3, h, 1.0)
            assert np.all(np.isfinite(val[:6])) and np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))
            for j in range(1, 5):
                assert np.all(np.isfinite(vK_derivative(v, h, j)))


def mc_unbiasedness(family, sigma2, n_draws=1_000_000, tau=0.3, h=0.8, seed=0):
    """Largest |mean rho* - rho_h| / MC-SE over a 21-point xi grid."""
    grid = np.linspace(-3, 3, 21)
    rng = stream(seed, "mc-identity", family, int(sigma2 * 100))
    eta = (laplace if family == "laplace" else normal)(rng, sigma2, n_draws)
    p = LossParams(tau, h, sigma2)
    z, gap = [], []
    for xi in grid:
        vals = rho_corrected(xi + eta, p)
        se = vals.std(ddof=1) / np.sqrt(n_draws)
        target = float(rho_smooth(xi, p))
        gap.append(abs(vals.mean() - target))
        z.append(gap[-1] / se)
    return np.array(z), np.array(gap)


@pytest.mark.parametrize("sigma2", [0.25, 1.0])
def test_laplace_identity(sigma2):
    z, _ = mc_unbiasedness("laplace", sigma2)
    assert z.max() < 3.0


def test_normal_truncation_bias_shrinks():
    # common random numbers, so the comparison isolates the truncation term
    _, g_small = mc_unbiasedness("normal", 0.25, n_draws=400_000, seed=4)
    _, g_big = mc_unbiasedness("normal", 1.0, n_draws=400_000, seed=4)
    assert g_small.max() < g_big.max()


class TestObjective:
    def _stage(self, sim):
        return stage_one(sim.dataset, ModelConfig())

    def test_zero_residual_single(self, case1_small):
        s1 = self._stage(case1_small)
        one = s1.__class__(**{**s1.__dict__, "ids": s1.ids[:1], "b_hat": s1.b_hat[:1],
                              "d": s1.d[:1], "rss": s1.rss[:1], "m": s1.m[:1],
                              "x": s1.x[:1], "alpha_hat": s1.alpha_hat[:1]})
        beta = np.linalg.lstsq(one.x, one.b_hat, rcond=None)[0]
        val, grad = corrected_objective(beta, one, LossParams(0.4, 0.8, 0.0))
        assert val == pytest.approx(0.0, abs=1e-14)
        step = 1e-6
        for c in range(3):
            e = np.zeros(3)
            e[c] = step
            fd = (corrected_objective(beta + e, one, LossParams(0.4, 0.8))[0]
                  - corrected_objective(beta - e, one, LossParams(0.4, 0.8))[0]) / (2 * step)
            assert grad[c] == pytest.approx(fd, abs=1e-7)

    def test_translation(self, case1_small, rng):
        s1 = self._stage(case1_small)
        p = LossParams(0.7, 0.8, 0.9)
        beta = np.array([2.0, 1.0, 1.0])
        c = rng.normal(size=3)
        moved = s1.with_b_hat(s1.b_hat + s1.x @ c)
        v0, g0 = corrected_objective(beta, s1, p)
        v1, g1 = corrected_objective(beta + c, moved, p)
        assert v1 == pytest.approx(v0, rel=1e-12)
        np.testing.assert_allclose(g1, g0, rtol=1e-9, atol=1e-9)

    def test_hessian_matches_gradient_differences(self, case1_small):
        s1 = self._stage(case1_small)
        beta = np.array([[1.7, 0.6, 1.2]])
        sd = np.sqrt(s1.d)
        _, g, hmat = batch_objective(beta, s1.b_hat, s1.x, sd, 0.3, 0.8, 1.0)
        step = 1e-6
        for c in range(3):
            e = np.zeros((1, 3))
            e[0, c] = step
            gu = batch_objective(beta + e, s1.b_hat, s1.x, sd, 0.3, 0.8, 1.0, hessian=False)[1]
            gd = batch_objective(beta - e, s1.b_hat, s1.x, sd, 0.3, 0.8, 1.0, hessian=False)[1]
            np.testing.assert_allclose(hmat[0, :, c], ((gu - gd) / (2 * step))[0], rtol=1e-5,
                                       atol=1e-5)
