"""Bayes, posterior and frequentist risks under squared-error loss.

Two kinds of model are accepted:

* :class:`FiniteModel` -- a finite prior table and likelihood table.  All
  risks are computed exactly (in rationals when the inputs are rational).
* continuous models exposing the sampling hooks of
  :class:`ContinuousModel` (see :mod:`doobdynkin.fiducial`).  Risks are
  Monte Carlo estimates with standard errors; improper priors must be
  truncated to [-T, T] and the resulting risks are left unnormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np

from .condexp import CondExpTable, ProjectionFit
from .extreal import INF, ExtReal, encode, ext_sum, is_inf, to_ext
from .factorization import FactorMap
from .measure import FiniteSpace, RandomMap
from .rng import DEFAULT_SEED, parallel_chunks, parallel_map, stream, task_id

DEFAULT_MC_SAMPLES = 100_000
DIVERGENCE_REL_CHANGE = 0.10


class ImproperPriorNeedsTruncation(ValueError):
    """Exact risk requested for a prior of infinite total mass."""


class UndefinedFiber(ValueError):
    """Conditioning on a data value of zero marginal mass."""


class RiskValue(NamedTuple):
    value: ExtReal
    stderr: float = 0.0


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def sq_loss(a, b):
    """Squared Euclidean distance; tuples are treated as vectors."""
    if isinstance(a, tuple) or isinstance(b, tuple):
        return sum((x - y) ** 2 for x, y in zip(a, b))
    return (a - b) ** 2


def _weighted_mean(weights, values):
    """Sum(w * v) / Sum(w) for scalars or tuples."""
    total = sum(weights)
    first = values[0]
    if isinstance(first, tuple):
        return tuple(sum(w * v[i] for w, v in zip(weights, values)) / total
                     for i in range(len(first)))
    return sum(w * v for w, v in zip(weights, values)) / total


@dataclass(frozen=True)
class FiniteModel:
    """Prior over parameter atoms, likelihood rows over data values, focus psi.

    ``likelihood[i][j]`` is P(Y = ys[j] | Theta = thetas[i]); each row must
    sum to one.  ``prior`` weights may be unnormalized (sigma-finite) and may
    include :data:`~doobdynkin.extreal.INF`.
    """

    thetas: Tuple[Any, ...]
    prior: Tuple[ExtReal, ...]
    ys: Tuple[Any, ...]
    likelihood: Tuple[Tuple[ExtReal, ...], ...]
    psi: Tuple[Any, ...]

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(self.thetas))
        object.__setattr__(self, "ys", tuple(self.ys))
        object.__setattr__(self, "prior", tuple(to_ext(w) for w in self.prior))
        object.__setattr__(self, "likelihood",
                           tuple(tuple(to_ext(p) for p in row) for row in self.likelihood))
        object.__setattr__(self, "psi", tuple(self.psi))
        k = len(self.thetas)
        if len(self.prior) != k or len(self.psi) != k or len(self.likelihood) != k:
            raise ValueError("prior, psi and likelihood need one entry per theta")
        if len(set(self.thetas)) != k or len(set(self.ys)) != len(self.ys):
            raise ValueError("theta and y labels must be unique")
        for w in self.prior:
            if w is not INF and w < 0:
                raise ValueError("prior weights must be non-negative")
        for theta, row in zip(self.thetas, self.likelihood):
            if len(row) != len(self.ys):
                raise ValueError(f"likelihood row for {theta!r} has the wrong length")
            if any(p is INF or p < 0 for p in row):
                raise ValueError(f"likelihood row for {theta!r} is not a distribution")
            s = ext_sum(row)
            ok = s == 1 if isinstance(s, Fraction) else abs(s - 1) <= 1e-12
            if not ok:
                raise ValueError(f"likelihood row for {theta!r} sums to {s}, not 1")

    @property
    def prior_mass(self) -> ExtReal:
        return ext_sum(self.prior)

    def joint(self, i: int, j: int) -> ExtReal:
        return self.prior[i] * self.likelihood[i][j]

    def marginal(self, y) -> ExtReal:
        j = self.ys.index(y)
        return ext_sum(self.joint(i, j) for i in range(len(self.thetas)))

    def posterior(self, y) -> Tuple[Tuple[Any, ...], Tuple[Any, ...]]:
        """(posterior weights, psi values) over thetas with positive joint mass."""
        j = self.ys.index(y)
        m = self.marginal(y)
        if m == 0:
            raise UndefinedFiber(f"y = {y!r} has zero marginal mass")
        if is_inf(m):
            raise ImproperPriorNeedsTruncation(f"y = {y!r} has infinite marginal mass")
        idx = [i for i in range(len(self.thetas)) if self.joint(i, j) != 0]
        return tuple(self.joint(i, j) / m for i in idx), tuple(self.psi[i] for i in idx)

    def as_space(self) -> Tuple[FiniteSpace, RandomMap, RandomMap, RandomMap]:
        """Product space of (theta, y) atoms with maps Theta, Y and Gamma = psi(Theta)."""
        atoms, weights = [], []
        for i, th in enumerate(self.thetas):
            for j, y in enumerate(self.ys):
                atoms.append((th, y))
                weights.append(self.joint(i, j))
        space = FiniteSpace(tuple(atoms), tuple(weights))
        theta_map = RandomMap(space, self.thetas, tuple(a[0] for a in atoms), "Theta")
        y_map = RandomMap(space, self.ys, tuple(a[1] for a in atoms), "Y")
        psi_of = dict(zip(self.thetas, self.psi))
        gamma = RandomMap.from_values(space, [psi_of[a[0]] for a in atoms], "Gamma")
        return space, theta_map, y_map, gamma


class ContinuousModel(Protocol):
    """Sampling hooks a continuous model provides to the Monte Carlo paths."""

    improper: bool

    def prior_mass(self, truncation: Optional[float]) -> float: ...

    def sample_prior(self, rng: np.random.Generator, n: int,
                     truncation: Optional[float]) -> np.ndarray: ...

    def sample_data(self, rng: np.random.Generator, theta: np.ndarray) -> np.ndarray: ...

    def sample_posterior(self, rng: np.random.Generator, y: float, n: int,
                         truncation: Optional[float] = None) -> np.ndarray: ...

    def psi_values(self, theta: np.ndarray) -> np.ndarray: ...

    def posterior_mean(self, y): ...


def as_rule(phi) -> Callable:
    """Turn any supported estimator into a callable of y.

    Accepts :class:`FactorMap`, :class:`CondExpTable`, :class:`ProjectionFit`,
    a mapping y -> action, or a callable.
    """
    if isinstance(phi, ProjectionFit):
        if phi.basis is None:
            raise ValueError("projection fit carries no basis")
        return phi
    if isinstance(phi, (FactorMap, CondExpTable)):
        return phi
    if isinstance(phi, Mapping):
        return phi.__getitem__
    if callable(phi):
        return phi
    raise TypeError(f"unsupported estimator {type(phi).__name__}")


def _vector_rule(phi) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(phi, ProjectionFit):
        return phi.predict
    rule = as_rule(phi)

    def apply(ys):
        out = rule(ys)
        out = np.asarray(out, dtype=float)
        if out.shape != np.shape(ys):
            out = np.broadcast_to(out, np.shape(ys))
        return out
    return apply


def _is_finite_model(model) -> bool:
    return isinstance(model, FiniteModel)


def _require_proper(model: FiniteModel):
    if is_inf(model.prior_mass):
        raise ImproperPriorNeedsTruncation(
            "prior has infinite mass; use a truncation sequence instead")


def _check_truncation(model, truncation):
    if truncation is None and getattr(model, "improper", False):
        raise ImproperPriorNeedsTruncation("improper prior: pass a truncation T")
    if truncation is not None and not truncation > 0:
        raise ValueError("truncation must be positive")


def _mean_stderr(samples: np.ndarray) -> Tuple[float, float]:
    n = samples.size
    mean = float(np.mean(samples))
    sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    return mean, sd / math.sqrt(n)


# ---------------------------------------------------------------------------
# risks
# ---------------------------------------------------------------------------


def _mc_bayes_losses(model, rule, truncation, n, seed, threads, label) -> np.ndarray:
    def work(rng, size):
        theta = model.sample_prior(rng, size, truncation)
        y = model.sample_data(rng, theta)
        return (model.psi_values(theta) - rule(y)) ** 2
    return np.concatenate(parallel_chunks(work, n, seed=seed, label=label, threads=threads))


def bayes_risk(model, phi, *, truncation: Optional[float] = None,
               n: int = DEFAULT_MC_SAMPLES, seed: int = DEFAULT_SEED,
               threads: int = 1) -> RiskValue:
    """r = E |psi(Theta) - phi(Y)|^2.

    Exact on a :class:`FiniteModel`; Monte Carlo on a continuous model, where
    an improper prior is restricted to [-T, T] and r(T) is unnormalized.
    """
    if _is_finite_model(model):
        _require_proper(model)
        rule = as_rule(phi)
        terms = []
        for i in range(len(model.thetas)):
            for j, y in enumerate(model.ys):
                w = model.joint(i, j)
                if w != 0:
                    terms.append(w * sq_loss(model.psi[i], rule(y)))
        return RiskValue(ext_sum(terms), 0.0)
    _check_truncation(model, truncation)
    losses = _mc_bayes_losses(model, _vector_rule(phi), truncation, n, seed, threads,
                              f"bayes_risk/{truncation!r}")
    mass = model.prior_mass(truncation)
    mean, se = _mean_stderr(losses)
    return RiskValue(mass * mean, mass * se)


def posterior_risk(model, phi, y, *, truncation: Optional[float] = None,
                   n: int = DEFAULT_MC_SAMPLES, seed: int = DEFAULT_SEED) -> RiskValue:
    """r^y = E(|psi(Theta) - phi(y)|^2 | Y = y)."""
    if _is_finite_model(model):
        if y not in model.ys:
            raise UndefinedFiber(f"unknown data value {y!r}")
        weights, psis = model.posterior(y)
        action = as_rule(phi)(y)
        return RiskValue(sum(w * sq_loss(g, action) for w, g in zip(weights, psis)), 0.0)
    rng = stream(seed, task_id(f"posterior_risk/{y!r}/{truncation!r}"))
    theta = model.sample_posterior(rng, y, n, truncation)
    action = float(_vector_rule(phi)(np.array([y], dtype=float))[0])
    return RiskValue(*_mean_stderr((model.psi_values(theta) - action) ** 2))


def optimal_action(model, y):
    """Posterior mean of psi(Theta) given Y = y: the minimizer of r^y."""
    if _is_finite_model(model):
        if y not in model.ys:
            raise UndefinedFiber(f"unknown data value {y!r}")
        weights, psis = model.posterior(y)
        return _weighted_mean(weights, psis)
    return model.posterior_mean(y)


def optimal_rule(model: FiniteModel) -> Dict[Any, Any]:
    """Table y -> optimal_action for every y of positive marginal mass."""
    return {y: optimal_action(model, y) for y in model.ys if model.marginal(y) != 0}


def frequentist_risk(model, phi, theta, *, n: int = DEFAULT_MC_SAMPLES,
                     seed: int = DEFAULT_SEED) -> RiskValue:
    """r^theta = E^theta |phi(Y) - psi(theta)|^2."""
    if _is_finite_model(model):
        i = model.thetas.index(theta)
        rule = as_rule(phi)
        terms = [p * sq_loss(rule(y), model.psi[i])
                 for y, p in zip(model.ys, model.likelihood[i]) if p != 0]
        return RiskValue(ext_sum(terms), 0.0)
    rng = stream(seed, task_id(f"frequentist_risk/{float(theta)!r}"))
    th = np.full(n, float(theta))
    y = model.sample_data(rng, th)
    return RiskValue(*_mean_stderr((model.psi_values(th) - _vector_rule(phi)(y)) ** 2))


def integrate_frequentist(model, phi, *, truncation: Optional[float] = None,
                          nodes: int = 200, n_per_node: int = 2_000,
                          seed: int = DEFAULT_SEED, threads: int = 1) -> RiskValue:
    """r = integral of r^theta against the prior.

    Exact sum on a finite model.  On a continuous model the truncated prior
    [-T, T] is integrated by the midpoint rule over ``nodes`` parameter
    values, each r^theta estimated by Monte Carlo.
    """
    if _is_finite_model(model):
        _require_proper(model)
        terms = [w * frequentist_risk(model, phi, th).value
                 for th, w in zip(model.thetas, model.prior) if w != 0]
        return RiskValue(ext_sum(terms), 0.0)
    _check_truncation(model, truncation)
    if truncation is None:
        raise ValueError("continuous proper priors need an explicit truncation range")
    h = 2.0 * truncation / nodes
    grid = -truncation + h * (np.arange(nodes) + 0.5)

    def at(k):
        return frequentist_risk(model, phi, float(grid[k]), n=n_per_node, seed=seed)
    risks = parallel_map(at, list(range(nodes)), threads)
    # midpoint rule against Lebesgue measure on [-T, T]
    value = h * math.fsum(r.value for r in risks)
    se = h * math.sqrt(math.fsum(r.stderr ** 2 for r in risks))
    return RiskValue(value, se)


@dataclass(frozen=True)
class Decomposition:
    bayes_risk: ExtReal
    integrated_posterior_risk: ExtReal
    discrepancy: ExtReal
    stderr: float = 0.0


def decompose(model, phi, *, truncation: Optional[float] = None,
              n: int = DEFAULT_MC_SAMPLES, inner: int = 64, seed: int = DEFAULT_SEED,
              threads: int = 1) -> Decomposition:
    """Compare r with the integral of r^y against the law of Y.

    On continuous models the two sides are independent Monte Carlo
    estimates: r from joint draws, the integral from draws of y followed by
    ``inner`` posterior draws each; ``stderr`` combines both.
    """
    if _is_finite_model(model):
        _require_proper(model)
        r = bayes_risk(model, phi).value
        terms = []
        for y in model.ys:
            m = model.marginal(y)
            if m != 0:
                terms.append(m * posterior_risk(model, phi, y).value)
        integrated = ext_sum(terms)
        return Decomposition(r, integrated, abs(r - integrated), 0.0)
    _check_truncation(model, truncation)
    r = bayes_risk(model, phi, truncation=truncation, n=n, seed=seed, threads=threads)
    rule = _vector_rule(phi)

    def work(rng, size):
        theta = model.sample_prior(rng, size, truncation)
        ys = model.sample_data(rng, theta)
        actions = rule(ys)
        out = np.empty(size)
        for k in range(size):
            post = model.sample_posterior(rng, float(ys[k]), inner, truncation)
            out[k] = np.mean((model.psi_values(post) - actions[k]) ** 2)
        return out
    per_y = np.concatenate(parallel_chunks(work, n // inner or 1, seed=seed,
                                           label=f"decompose/{truncation!r}",
                                           chunk=2_000, threads=threads))
    mass = model.prior_mass(truncation)
    mean, se = _mean_stderr(per_y)
    integrated = RiskValue(mass * mean, mass * se)
    return Decomposition(r.value, integrated.value, abs(r.value - integrated.value),
                         math.hypot(r.stderr, integrated.stderr))


# ---------------------------------------------------------------------------
# truncation sequences
# ---------------------------------------------------------------------------


def relative_changes(values: Sequence[float]) -> List[float]:
    out = []
    for prev, cur in zip(values, values[1:]):
        if prev == cur:
            out.append(0.0)
        elif prev == 0:
            out.append(math.inf)
        else:
            out.append(abs(cur - prev) / abs(prev))
    return out


def cauchy_diverged(values: Sequence[float], rel_tol: float = DIVERGENCE_REL_CHANGE) -> bool:
    """True when the last three values are not Cauchy to ``rel_tol``.

    Any relative change above ``rel_tol`` among the final three entries
    counts as failure.  Fewer than two values never diverge.
    """
    tail = list(values)[-3:]
    if any(is_inf(v) for v in tail):
        return True
    return any(c > rel_tol for c in relative_changes([float(v) for v in tail]))


@dataclass(frozen=True)
class RiskCurve:
    truncations: Tuple[float, ...]
    risks: Tuple[float, ...]
    stderrs: Tuple[float, ...]
    diverged: bool

    def points(self):
        return list(zip(self.truncations, self.risks, self.stderrs))


def truncated_risk_curve(model, phi, truncations: Sequence[float], *,
                         n: int = DEFAULT_MC_SAMPLES, seed: int = DEFAULT_SEED,
                         threads: int = 1) -> RiskCurve:
    """r(T) for increasing T, with the Cauchy divergence verdict."""
    ts = tuple(float(t) for t in truncations)
    if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("truncations must be a nonempty increasing sequence")
    vals = [bayes_risk(model, phi, truncation=t, n=n, seed=seed, threads=threads) for t in ts]
    risks = tuple(float(v.value) for v in vals)
    return RiskCurve(ts, risks, tuple(v.stderr for v in vals), cauchy_diverged(risks))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RiskReport:
    """Everything the ``risk`` subcommand writes out."""

    bayes_risk: ExtReal
    bayes_stderr: float
    posterior_risk: Dict[Any, Tuple[ExtReal, float]]
    frequentist_risk: Dict[Any, Tuple[ExtReal, float]]
    diverged: bool
    discrepancy: Optional[ExtReal] = None
    integrated_frequentist: Optional[ExtReal] = None
    curve: Optional[RiskCurve] = None

    def __post_init__(self):
        if self.diverged and self.bayes_risk is not INF:
            object.__setattr__(self, "bayes_risk", INF)

    def as_dict(self) -> Dict[str, Any]:
        def row(key, v):
            return {"key": encode(key) if not isinstance(key, tuple) else list(key),
                    "value": encode(v[0]), "stderr": v[1]}
        out: Dict[str, Any] = {
            "bayes_risk": encode(self.bayes_risk),
            "bayes_stderr": self.bayes_stderr,
            "posterior_risk": [row(k, v) for k, v in self.posterior_risk.items()],
            "frequentist_risk": [row(k, v) for k, v in self.frequentist_risk.items()],
            "diverged": self.diverged,
        }
        if self.discrepancy is not None:
            out["discrepancy"] = encode(self.discrepancy)
        if self.integrated_frequentist is not None:
            out["integrated_frequentist"] = encode(self.integrated_frequentist)
        if self.curve is not None:
            out["curve"] = [{"T": t, "r": r, "stderr": s} for t, r, s in self.curve.points()]
        return out


def risk_report(model, phi, *, truncations: Optional[Sequence[float]] = None,
                ys: Sequence[float] = (0.0,), thetas: Sequence[float] = (0.0,),
                n: int = DEFAULT_MC_SAMPLES, seed: int = DEFAULT_SEED,
                threads: int = 1) -> RiskReport:
    """Exact report on finite models; truncation curve plus spot checks otherwise."""
    if _is_finite_model(model):
        rule = as_rule(phi)
        # fibres of zero or infinite mass carry no posterior
        post = {y: tuple(posterior_risk(model, rule, y)) for y in model.ys
                if model.marginal(y) != 0 and not is_inf(model.marginal(y))}
        freq = {th: tuple(frequentist_risk(model, rule, th)) for th in model.thetas}
        if is_inf(model.prior_mass):
            return RiskReport(INF, 0.0, post, freq, True)
        r = bayes_risk(model, rule)
        dec = decompose(model, rule)
        integ = integrate_frequentist(model, rule)
        return RiskReport(r.value, 0.0, post, freq, False, dec.discrepancy, integ.value)
    if not truncations:
        raise ImproperPriorNeedsTruncation("continuous models need --truncations")
    curve = truncated_risk_curve(model, phi, truncations, n=n, seed=seed, threads=threads)
    post = {y: tuple(posterior_risk(model, phi, y, n=n, seed=seed)) for y in ys}
    freq = {th: tuple(frequentist_risk(model, phi, th, n=n, seed=seed)) for th in thetas}
    return RiskReport(curve.risks[-1], curve.stderrs[-1], post, freq, curve.diverged,
                      curve=curve)
