import itertools
import random
from fractions import Fraction

import numpy as np
import pytest

from doobdynkin.extreal import INF
from doobdynkin.fiducial import LocationModel
from doobdynkin.risk import (FiniteModel, ImproperPriorNeedsTruncation, RiskReport,
                             UndefinedFiber, bayes_risk, cauchy_diverged, decompose,
                             frequentist_risk, integrate_frequentist, optimal_action,
                             optimal_rule, posterior_risk, relative_changes, risk_report,
                             truncated_risk_curve)


def random_model(rng, n_theta, n_y, grid=None, allow_zero=True):
    """Random rational model; likelihood rows are normalized integer draws."""
    thetas = tuple(range(n_theta))
    lo = 0 if allow_zero else 1
    prior = tuple(Fraction(rng.randint(lo, 6), rng.randint(1, 4)) for _ in thetas)
    if not any(prior):
        prior = (Fraction(1),) + prior[1:]
    rows = []
    for _ in thetas:
        raw = [rng.randint(lo, 5) for _ in range(n_y)]
        if not any(raw):
            raw[rng.randrange(n_y)] = 1
        rows.append(tuple(Fraction(r, sum(raw)) for r in raw))
    if grid is None:
        psi = tuple(Fraction(rng.randint(-6, 6), rng.randint(1, 3)) for _ in thetas)
    else:
        psi = tuple(rng.choice(grid) for _ in thetas)
    return FiniteModel(thetas, prior, tuple(f"y{j}" for j in range(n_y)), tuple(rows), psi)


def bayes_oracle(model, table):
    """Direct double sum over (theta, y) of prior * likelihood * loss."""
    total = Fraction(0)
    for i, _ in enumerate(model.thetas):
        for j, y in enumerate(model.ys):
            total += model.prior[i] * model.likelihood[i][j] * (model.psi[i] - table[y]) ** 2
    return total


def posterior_oracle(model, y, action):
    j = model.ys.index(y)
    num = sum(model.prior[i] * model.likelihood[i][j] * (model.psi[i] - action) ** 2
              for i in range(len(model.thetas)))
    den = sum(model.prior[i] * model.likelihood[i][j] for i in range(len(model.thetas)))
    return num / den


TOY = FiniteModel(
    thetas=("a", "b"), prior=(Fraction(1, 2), Fraction(1, 2)), ys=(0, 1),
    likelihood=((Fraction(3, 4), Fraction(1, 4)), (Fraction(1, 4), Fraction(3, 4))),
    psi=(0, 1))


class TestFiniteRisks:
    def test_toy_values(self):
        # posterior at y=0 is (3/4, 1/4); mean 1/4, variance 3/16
        assert optimal_action(TOY, 0) == Fraction(1, 4)
        assert posterior_risk(TOY, optimal_rule(TOY), 0).value == Fraction(3, 16)
        assert bayes_risk(TOY, optimal_rule(TOY)).value == Fraction(3, 16)
        assert frequentist_risk(TOY, {0: 0, 1: 1}, "a").value == Fraction(1, 4)

    def test_constant_focus_zero_risk(self):
        m = FiniteModel((1, 2), (1, 3), ("u", "v"), ((Fraction(1, 2),) * 2, (0, 1)), (5, 5))
        assert bayes_risk(m, lambda y: 5).value == 0
        assert optimal_rule(m) == {"u": 5, "v": 5}

    def test_likelihood_rows_validated(self):
        with pytest.raises(ValueError):
            FiniteModel((1,), (1,), ("u", "v"), ((Fraction(1, 2), Fraction(1, 3)),), (0,))

    @pytest.mark.parametrize("seed", range(10))
    def test_exhaustive_optimality(self, seed):
        rng = random.Random(seed)
        grid = (0, 1, 2)
        for n_theta in (1, 2, 3):
            for n_y in (1, 2, 3):
                m = random_model(rng, n_theta, n_y, grid)
                best = bayes_risk(m, optimal_rule(m)).value
                defined = [y for y in m.ys if m.marginal(y) != 0]
                for actions in itertools.product(grid, repeat=len(defined)):
                    table = dict(zip(defined, actions))
                    assert best <= bayes_risk(m, table).value

    def test_bayes_and_posterior_match_summation_oracle(self):
        rng = random.Random(1)
        for _ in range(50):
            m = random_model(rng, rng.randint(1, 4), rng.randint(1, 4))
            table = {y: Fraction(rng.randint(-3, 3)) for y in m.ys}
            assert bayes_risk(m, table).value == bayes_oracle(m, table)
            for y in m.ys:
                if m.marginal(y) != 0:
                    assert posterior_risk(m, table, y).value == posterior_oracle(m, y, table[y])

    def test_posterior_risk_dominance_over_grid(self):
        rng = random.Random(2)
        grid = [Fraction(k, 4) for k in range(-24, 25)]
        for _ in range(30):
            m = random_model(rng, 3, 3)
            for y in m.ys:
                if m.marginal(y) == 0:
                    continue
                opt = posterior_risk(m, optimal_rule(m), y).value
                assert all(opt <= posterior_risk(m, lambda _y: a, y).value for a in grid)

    def test_decomposition_and_fubini_exact(self):
        rng = random.Random(3)
        for _ in range(200):
            m = random_model(rng, rng.randint(1, 4), rng.randint(1, 4))
            table = {y: Fraction(rng.randint(-4, 4), 3) for y in m.ys}
            d = decompose(m, table)
            assert d.discrepancy == 0 and isinstance(d.bayes_risk, Fraction)
            assert integrate_frequentist(m, table).value == bayes_risk(m, table).value

    def test_point_mass_prior(self):
        m = FiniteModel((0, 1, 2), (0, 1, 0), ("u", "v"),
                        ((1, 0), (Fraction(1, 3), Fraction(2, 3)), (0, 1)), (7, 11, 13))
        assert optimal_rule(m) == {"u": 11, "v": 11}
        phi = {"u": 10, "v": 12}
        assert integrate_frequentist(m, phi).value == frequentist_risk(m, phi, 1).value

    def test_deterministic_data(self):
        m = FiniteModel((0, 1, 2), (Fraction(1, 6), Fraction(1, 3), Fraction(1, 2)), ("y", "z"),
                        ((1, 0), (1, 0), (1, 0)), (0, 3, 6))
        r_y = posterior_risk(m, {"y": 2}, "y").value
        assert bayes_risk(m, {"y": 2}).value == r_y
        with pytest.raises(UndefinedFiber):
            posterior_risk(m, {"y": 2}, "z")
        with pytest.raises(UndefinedFiber):
            optimal_action(m, "z")

    def test_infinite_prior_needs_truncation(self):
        m = FiniteModel((0, 1), (1, INF), ("y",), ((1,), (1,)), (0, 1))
        for fn in (bayes_risk, integrate_frequentist, decompose):
            with pytest.raises(ImproperPriorNeedsTruncation):
                fn(m, {"y": 0})
        rep = risk_report(m, {"y": 0})
        assert rep.diverged and rep.bayes_risk is INF

    def test_report_contents(self):
        rep = risk_report(TOY, optimal_rule(TOY))
        d = rep.as_dict()
        assert d["bayes_risk"] == "3/16" and d["discrepancy"] == 0
        assert d["integrated_frequentist"] == "3/16" and not d["diverged"]

    def test_diverged_forces_infinity(self):
        assert RiskReport(3.0, 0.1, {}, {}, True).bayes_risk is INF


class TestCauchy:
    def test_relative_changes(self):
        assert relative_changes([1.0, 2.0, 2.0]) == [1.0, 0.0]
        assert relative_changes([0.0, 1.0]) == [float("inf")]

    def test_verdicts(self):
        assert cauchy_diverged([2.0, 20.0, 200.0])
        assert not cauchy_diverged([1.0, 1.05, 1.06])
        assert not cauchy_diverged([0.0, 0.0, 0.0])
        assert not cauchy_diverged([5.0])
        assert cauchy_diverged([100.0, 1.0, 1.0, 1.01, 1.2])
        assert cauchy_diverged([1.0, INF])


class TestNormalLocation:
    model = LocationModel.named("normal", "identity")

    @pytest.mark.parametrize("theta", [-5.0, 0.0, 3.0])
    def test_frequentist_risk_is_one(self, theta):
        r = frequentist_risk(self.model, lambda y: y, theta, n=50_000, seed=3)
        assert abs(r.value - 1.0) < 3 * r.stderr

    def test_optimal_action_is_y(self):
        assert optimal_action(self.model, 2.5) == 2.5

    def test_improper_needs_truncation(self):
        with pytest.raises(ImproperPriorNeedsTruncation):
            bayes_risk(self.model, lambda y: y)
        with pytest.raises(ImproperPriorNeedsTruncation):
            risk_report(self.model, lambda y: y)

    def test_posterior_risk_is_one(self):
        for y in (-3.0, 0.0, 2.5):
            r = posterior_risk(self.model, lambda v: v, y, n=50_000)
            assert abs(r.value - 1.0) < 3 * r.stderr

    def test_truncated_curve(self):
        curve = truncated_risk_curve(self.model, lambda y: y, (1, 10, 100), n=50_000)
        assert list(curve.risks) == sorted(curve.risks)
        assert abs(curve.risks[-1] / 200 - 1) <= 0.05
        for t, r, se in curve.points():
            assert abs(r - 2 * t) < 3 * se
        assert curve.diverged

    def test_integrate_frequentist_continuous(self):
        r = integrate_frequentist(self.model, lambda y: y, truncation=10.0, nodes=50,
                                  n_per_node=1000)
        assert abs(r.value - 20.0) < 3 * r.stderr

    def test_mc_decomposition(self):
        d = decompose(self.model, lambda y: y, truncation=5.0, n=40_000)
        assert d.discrepancy < 3 * d.stderr
        assert abs(d.bayes_risk - 10.0) < 0.5

    def test_threads_do_not_change_results(self):
        a = bayes_risk(self.model, lambda y: y, truncation=3.0, n=30_000, threads=1)
        b = bayes_risk(self.model, lambda y: y, truncation=3.0, n=30_000, threads=4)
        assert a == b
        assert np.isfinite(a.value)
