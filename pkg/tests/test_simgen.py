import numpy as np
import pytest
from scipy import stats

from trajqr.model import ModelConfig, build_design_matrix, feature_contrast
from trajqr.rng import SQRT3, exponential, laplace, normal, stream, uniform_sym
from trajqr.simgen import (Case, SimScenario, generate, ks_distance, laplace_cdf,
                           run_replication, truth)

N_KS = 100_000


def test_truth_function():
    for tau in (0.1, 0.5, 0.9):
        z = stats.norm.ppf(tau)
        np.testing.assert_allclose(truth(tau), [2 + 0.1 * z, 1 + z, 1 + z], rtol=1e-15)
    np.testing.assert_allclose(truth(0.5), [2, 1, 1])


def test_covariate_moments():
    sim = generate(SimScenario("case1", 100_000, seed=1))
    x = np.array([s.x for s in sim.dataset.subjects])
    assert abs(x[:, 1].mean() - 0.25) < 0.003
    assert abs(x[:, 2].mean() - 0.5) < 0.005
    assert abs(sim.alpha[:, 0].mean() - 1.25) < 0.02
    m = np.array([s.m for s in sim.dataset.subjects])
    assert m.min() >= 4 and m.max() <= 9


def test_poisson_gaps():
    sim = generate(SimScenario("case2", 25_000, seed=2))
    gaps = np.concatenate([np.diff(np.concatenate([[0.0], s.times])) for s in sim.dataset.subjects])
    assert gaps.size >= 100_000
    assert abs(gaps.mean() - 1.25) < 0.02
    assert ks_distance(gaps, stats.expon(scale=1.25).cdf) < 0.01


class TestSamplers:
    def test_laplace_variance(self):
        d = laplace(stream(0, "t"), 1.0, N_KS)
        assert abs(d.var() - 1) < 0.02

    def test_laplace_ks(self):
        d = laplace(stream(1, "t"), 1.0, N_KS)
        assert ks_distance(d, laplace_cdf) < 0.01
        # independent reference CDF
        assert ks_distance(d, stats.laplace(scale=1 / np.sqrt(2)).cdf) < 0.01

    def test_normal_ks(self):
        assert ks_distance(normal(stream(2, "t"), 1.0, N_KS), stats.norm.cdf) < 0.01

    def test_exponential_ks(self):
        d = exponential(stream(3, "t"), 0.8, N_KS)
        assert ks_distance(d, stats.expon(scale=1.25).cdf) < 0.01

    def test_uniform_ks_and_variance(self):
        d = uniform_sym(stream(4, "t"), SQRT3 / 2, N_KS)
        assert ks_distance(d, stats.uniform(-SQRT3 / 2, SQRT3).cdf) < 0.01
        assert (SQRT3 ** 2) / 12 == pytest.approx(0.25)
        assert abs(d.var() - 0.25) < 0.005

    def test_ks_distance_matches_scipy(self, rng):
        d = rng.normal(size=500)
        assert ks_distance(d, stats.norm.cdf) == pytest.approx(stats.kstest(d, "norm").statistic)


@pytest.mark.parametrize("case", list(Case))
def test_hidden_truth_consistency(case):
    sim = generate(SimScenario(case, 200, seed=3))
    sc = sim.scenario
    gamma = feature_contrast(sc.k, sc.t_star)
    np.testing.assert_array_equal(sim.b, sim.alpha @ gamma)
    x1 = np.array([s.x[1] for s in sim.dataset.subjects])
    x2 = np.array([s.x[2] for s in sim.dataset.subjects])
    if sc.k == 2:
        # b + 2 c t* with b the linear coefficient
        np.testing.assert_allclose(sim.b, sim.alpha[:, 1] + 2 * sim.alpha[:, 2] * sc.t_star,
                                   rtol=1e-14)
    for i, s in enumerate(sim.dataset.subjects):
        y = build_design_matrix(s.times, sc.k) @ sim.alpha[i] + sim.eps[i]
        np.testing.assert_allclose(s.y, y, rtol=1e-14)
    deltas = np.array([s.delta for s in sim.dataset.subjects])
    if case in (Case.CASE3, Case.CASE4) or sc.k == 2:
        np.testing.assert_allclose(deltas, (1 + x1) ** -2)
    else:
        assert np.all(deltas == 1.0)
    assert np.all((x2 == 0) | (x2 == 1))


def test_case_aliases():
    assert Case.parse("case1") is Case.CASE1
    assert SimScenario("quadratic_laplace", 10, 0).t_star == 1.0
    with pytest.raises(ValueError):
        Case.parse("case9")


def test_generate_deterministic():
    a = generate(SimScenario("case3", 50, seed=4))
    b = generate(SimScenario("case3", 50, seed=4))
    for sa, sb in zip(a.dataset.subjects, b.dataset.subjects):
        np.testing.assert_array_equal(sa.y, sb.y)


class TestReplication:
    cfg = ModelConfig(seed=2)

    def test_single_replicate(self):
        rep = run_replication(SimScenario("case1", 150, seed=1), self.cfg, 1,
                              tau_grid=(0.5,), n_b=0)
        assert rep.n_reps == 1
        np.testing.assert_array_equal(rep.sd_proposed, 0)

    def test_identical_seeds(self):
        sc = SimScenario("case1", 150, seed=6)
        a = run_replication(sc, self.cfg, 3, tau_grid=(0.3, 0.7), n_b=10)
        b = run_replication(sc, self.cfg, 3, tau_grid=(0.3, 0.7), n_b=10)
        assert list(a.rows()) == list(b.rows())

    def test_workers_do_not_change_result(self):
        sc = SimScenario("case2", 120, seed=6)
        a = run_replication(sc, self.cfg, 2, tau_grid=(0.5,), n_b=5, workers=1)
        b = run_replication(sc, self.cfg, 2, tau_grid=(0.5,), n_b=5, workers=2)
        assert list(a.rows()) == list(b.rows())

    def test_rows_schema(self):
        rep = run_replication(SimScenario("case1", 150, seed=1), self.cfg, 2,
                              tau_grid=(0.25, 0.75), n_b=4)
        rows = list(rep.rows())
        assert len(rows) == 2 * 3
        assert rows[0][:2] == (0.25, "intercept")
        assert all(0 <= r[6] <= 1 for r in rows)
