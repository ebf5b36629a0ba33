import math

import numpy as np
import pytest
from scipy import integrate, stats

from doobdynkin.fiducial import (NOISE_FAMILIES, LocationModel, density_mass,
                                 divergence_demo, fiducial_posterior, focus, mc_summary,
                                 posterior_point_estimate, posterior_risk_location)

N = 100_000


@pytest.mark.parametrize("name", ["normal", "uniform", "laplace", "zero"])
def test_density_integrates_to_one(name):
    assert abs(density_mass(NOISE_FAMILIES[name]) - 1.0) <= 1e-6


@pytest.mark.parametrize("name", ["normal", "uniform", "laplace"])
def test_declared_moments_match_density(name):
    # quadrature oracle for the second and fourth moments
    noise = NOISE_FAMILIES[name]
    for k in (2, 4):
        edges = sorted({-60.0, *noise.kinks, 60.0})
        val = math.fsum(integrate.quad(lambda x: x ** k * float(noise.pdf(x)), a, b,
                                       limit=200)[0] for a, b in zip(edges, edges[1:]))
        assert val == pytest.approx(noise.moments[k], rel=1e-8)


class TestPosterior:
    def test_degenerate_noise(self):
        post = fiducial_posterior(LocationModel.named("zero"), 1.75, 100)
        assert np.all(post.samples == 1.75)
        assert post.closed_form == ("point", 1.75)

    def test_normal_posterior(self):
        post = fiducial_posterior(LocationModel.named("normal"), 2.5, N, seed=11)
        assert post.closed_form == ("gaussian", 2.5, 1.0)
        assert abs(post.samples.mean() - 2.5) <= 3 / math.sqrt(N)
        assert abs(post.samples.var() - 1.0) <= 0.02

    def test_uniform_ks(self):
        post = fiducial_posterior(LocationModel.named("uniform"), 0.0, N, seed=12)
        ks = stats.kstest(post.samples, NOISE_FAMILIES["uniform"].cdf).statistic
        assert ks < 1.63 / math.sqrt(N)

    def test_translation_equivariance(self):
        m = LocationModel.named("laplace")
        a = fiducial_posterior(m, 0.5, 1000, seed=4).shifted(3.0)
        b = fiducial_posterior(m, 3.5, 1000, seed=4)
        np.testing.assert_allclose(a.samples, b.samples, atol=1e-12)
        assert a.closed_form == b.closed_form and a.y == b.y

    def test_requires_positive_n(self):
        with pytest.raises(ValueError):
            fiducial_posterior(LocationModel.named(), 0.0, 0)


class TestPointEstimate:
    @pytest.mark.parametrize("y", [-3.0, 0.0, 2.5])
    def test_identity_gives_y(self, y):
        post = fiducial_posterior(LocationModel.named("normal"), y, N, seed=1)
        assert posterior_point_estimate(post, "identity") == y
        s = mc_summary(post, "identity")
        assert abs(s.estimate - y) < 3 * s.estimate_stderr

    @pytest.mark.parametrize("noise", ["uniform", "laplace"])
    def test_symmetric_noise(self, noise):
        post = fiducial_posterior(LocationModel.named(noise), -1.25, 10, seed=1)
        assert posterior_point_estimate(post, "identity") == -1.25

    def test_constant_focus(self):
        post = fiducial_posterior(LocationModel.named("normal"), 4.0, 10)
        assert posterior_point_estimate(post, focus("constant", 2.0)) == 2.0

    def test_square_focus(self):
        post = fiducial_posterior(LocationModel.named("normal"), 1.5, N, seed=2)
        assert posterior_point_estimate(post, "square") == pytest.approx(1.5 ** 2 + 1, abs=1e-12)
        s = mc_summary(post, "square")
        assert abs(s.estimate - 3.25) < 3 * s.estimate_stderr

    def test_custom_focus_uses_samples(self):
        post = fiducial_posterior(LocationModel.named("normal"), 0.0, N, seed=3)
        est = posterior_point_estimate(post, np.abs)
        assert abs(est - math.sqrt(2 / math.pi)) < 0.01


class TestPosteriorRisk:
    def test_normal_identity_exact(self):
        m = LocationModel.named("normal")
        assert all(posterior_risk_location(m, y) == 1.0 for y in (-3.0, 0.0, 2.5))

    def test_zero_noise(self):
        assert posterior_risk_location(LocationModel.named("zero"), 5.0) == 0.0

    def test_uniform_identity_mc(self):
        m = LocationModel.named("uniform")
        post = fiducial_posterior(m, 0.0, N, seed=5)
        s = mc_summary(post, "identity")
        assert abs(s.risk - 1 / 3) < 3 * s.risk_stderr
        assert posterior_risk_location(m, 0.0) == pytest.approx(1 / 3, abs=1e-15)

    def test_constant_across_y(self):
        m = LocationModel.named("laplace")
        vals = [posterior_risk_location(m, y, closed_form=False, n=N, seed=6)
                for y in (-10.0, 0.0, 10.0)]
        # shared seed: the samples are translates, so the estimates agree to round-off
        assert max(vals) - min(vals) < 1e-9
        assert abs(vals[0] - 2.0) < 0.05

    def test_square_focus_variance(self):
        # Var((y-u)^2) for standard normal u is 4y^2 + 2
        m = LocationModel.named("normal", "square")
        assert posterior_risk_location(m, 1.5) == pytest.approx(4 * 2.25 + 2)


class TestDivergence:
    def test_normal_identity(self):
        demo = divergence_demo(LocationModel.named("normal"), n=50_000)
        r = demo.curve.risks
        assert list(r) == sorted(r)
        assert abs(r[-1] / 200 - 1) <= 0.05
        assert demo.diverged
        for _, _, ry, se in demo.posterior_risks:
            assert abs(ry - 1.0) < 3 * se

    def test_zero_noise_is_flat(self):
        demo = divergence_demo(LocationModel.named("zero"), n=1000)
        assert demo.curve.risks == (0.0, 0.0, 0.0)
        assert not demo.diverged

    def test_custom_focus_runs(self):
        demo = divergence_demo(LocationModel.named("normal"), np.abs, (1, 2), n=2000)
        assert len(demo.posterior_risks) == 4
