"""Location model y = theta + u under the improper flat prior.

With Lebesgue measure as the prior the posterior of theta given y is the
law of y - u, so posterior sampling is direct inversion of fresh noise
draws.  The Bayes risk of any estimator is then infinite even though the
posterior risk is finite; :func:`divergence_demo` makes that visible by
truncating the prior to [-T, T].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from . import risk
from .rng import DEFAULT_SEED, stream, task_id


@dataclass(frozen=True)
class NoiseFamily:
    """A zero-centred noise law with density, CDF, sampler and raw moments.

    ``moments[k]`` is E(u^k) for k = 0..4.  ``pdf`` is None for the point
    mass at zero.
    """

    name: str
    pdf: Optional[Callable[[np.ndarray], np.ndarray]]
    cdf: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    moments: Tuple[float, ...]
    kinks: Tuple[float, ...] = ()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.sampler(rng, n)

    @property
    def mean(self) -> float:
        return self.moments[1]

    @property
    def variance(self) -> float:
        return self.moments[2] - self.moments[1] ** 2


def _normal_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def _laplace_cdf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0)), 1 - 0.5 * np.exp(-np.maximum(x, 0)))


NOISE_FAMILIES: Dict[str, NoiseFamily] = {
    "normal": NoiseFamily(
        "normal",
        lambda x: np.exp(-0.5 * np.asarray(x, dtype=float) ** 2) / math.sqrt(2 * math.pi),
        _normal_cdf,
        lambda rng, n: rng.standard_normal(n),
        (1.0, 0.0, 1.0, 0.0, 3.0),
    ),
    "uniform": NoiseFamily(
        "uniform",
        lambda x: np.where(np.abs(np.asarray(x, dtype=float)) <= 1.0, 0.5, 0.0),
        lambda x: np.clip((np.asarray(x, dtype=float) + 1.0) / 2.0, 0.0, 1.0),
        lambda rng, n: rng.uniform(-1.0, 1.0, n),
        (1.0, 0.0, 1.0 / 3.0, 0.0, 1.0 / 5.0),
        (-1.0, 1.0),
    ),
    "laplace": NoiseFamily(
        "laplace",
        lambda x: 0.5 * np.exp(-np.abs(np.asarray(x, dtype=float))),
        _laplace_cdf,
        lambda rng, n: rng.laplace(0.0, 1.0, n),
        (1.0, 0.0, 2.0, 0.0, 24.0),
        (0.0,),
    ),
    "zero": NoiseFamily(
        "zero",
        None,
        lambda x: np.where(np.asarray(x, dtype=float) >= 0, 1.0, 0.0),
        lambda rng, n: np.zeros(n),
        (1.0, 0.0, 0.0, 0.0, 0.0),
    ),
}


def density_mass(noise: NoiseFamily, half_width: float = 60.0) -> float:
    """Numerical integral of the noise density over [-half_width, half_width]."""
    if noise.pdf is None:
        return 1.0
    edges = sorted({-half_width, *noise.kinks, half_width})
    f = lambda x: float(noise.pdf(x))
    return math.fsum(integrate.quad(f, a, b, limit=200, epsabs=1e-12)[0]
                     for a, b in zip(edges, edges[1:]))


@dataclass(frozen=True)
class Focus:
    """Focus parameter psi(theta); known names get closed-form posterior moments."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    constant: float = 0.0

    def __call__(self, theta):
        return self.fn(theta)


def focus(name: str, constant: float = 0.0) -> Focus:
    if name == "identity":
        return Focus("identity", lambda t: np.asarray(t, dtype=float))
    if name == "square":
        return Focus("square", lambda t: np.asarray(t, dtype=float) ** 2)
    if name == "constant":
        return Focus("constant", lambda t: np.full(np.shape(t), float(constant)), constant)
    raise ValueError(f"unknown focus {name!r}")


def _shifted_moment(noise: NoiseFamily, y: float, k: int) -> float:
    """E((y - u)^k) from the raw moments of u."""
    return math.fsum(comb(k, j) * y ** (k - j) * (-1) ** j * noise.moments[j]
                     for j in range(k + 1))


@dataclass(frozen=True)
class LocationModel:
    """y = theta + u with an improper flat prior on theta."""

    noise: NoiseFamily
    psi: Focus
    improper: bool = True

    @classmethod
    def named(cls, noise: str = "normal", psi: str = "identity",
              constant: float = 0.0) -> "LocationModel":
        if noise not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {noise!r}")
        return cls(NOISE_FAMILIES[noise], focus(psi, constant))

    # sampling hooks used by doobdynkin.risk

    def prior_mass(self, truncation: Optional[float]) -> float:
        if truncation is None:
            raise risk.ImproperPriorNeedsTruncation("flat prior has infinite mass")
        return 2.0 * truncation

    def sample_prior(self, rng, n, truncation):
        if truncation is None:
            raise risk.ImproperPriorNeedsTruncation("cannot sample a flat prior")
        return rng.uniform(-truncation, truncation, n)

    def sample_data(self, rng, theta):
        theta = np.asarray(theta, dtype=float)
        return theta + self.noise.sample(rng, theta.size).reshape(theta.shape)

    def sample_posterior(self, rng, y, n, truncation=None):
        """theta = y - u; under a truncated prior, reject draws outside [-T, T]."""
        if truncation is None:
            return y - self.noise.sample(rng, n)
        out: List[np.ndarray] = []
        have = 0
        for _ in range(1000):
            if have >= n:
                break
            draw = y - self.noise.sample(rng, max(2 * (n - have), 64))
            keep = draw[np.abs(draw) <= truncation]
            out.append(keep)
            have += keep.size
        else:
            raise ValueError(f"posterior at y = {y} has negligible mass inside [-T, T]")
        return np.concatenate(out)[:n]

    def psi_values(self, theta):
        return self.psi(theta)

    # closed forms

    def has_closed_form(self) -> bool:
        return self.psi.name in ("identity", "square", "constant")

    def posterior_mean(self, y):
        """E(psi(theta) | y) under the flat prior; vectorized over y."""
        y = np.asarray(y, dtype=float)
        m = self.noise.moments
        if self.psi.name == "identity":
            return y - m[1]
        if self.psi.name == "square":
            return y ** 2 - 2 * y * m[1] + m[2]
        if self.psi.name == "constant":
            return np.full(y.shape, self.psi.constant)
        raise NotImplementedError(f"no closed form for focus {self.psi.name!r}")

    def posterior_variance(self, y: float) -> float:
        if self.psi.name == "identity":
            return self.noise.variance
        if self.psi.name == "square":
            return _shifted_moment(self.noise, y, 4) - _shifted_moment(self.noise, y, 2) ** 2
        if self.psi.name == "constant":
            return 0.0
        raise NotImplementedError(f"no closed form for focus {self.psi.name!r}")


@dataclass(frozen=True)
class FiducialPosterior:
    """Posterior of theta given y, as samples y - u_i plus a closed-form tag."""

    y: float
    samples: np.ndarray
    noise: NoiseFamily
    closed_form: Optional[Tuple] = None

    def shifted(self, c: float) -> "FiducialPosterior":
        tag = None
        if self.closed_form is not None:
            tag = (self.closed_form[0], self.closed_form[1] + c, *self.closed_form[2:])
        return FiducialPosterior(self.y + c, self.samples + c, self.noise, tag)


def _closed_form_tag(noise: NoiseFamily, y: float) -> Optional[Tuple]:
    if noise.name == "normal":
        return ("gaussian", y, 1.0)
    if noise.name == "uniform":
        return ("uniform", y, 1.0)
    if noise.name == "laplace":
        return ("laplace", y, 1.0)
    if noise.name == "zero":
        return ("point", y)
    return None


def fiducial_posterior(model: LocationModel, y: float, n: int,
                       seed: int = DEFAULT_SEED, *, label: str = "fiducial_posterior"
                       ) -> FiducialPosterior:
    """Draw theta_i = y - u_i, i = 1..n.

    The noise draws depend only on ``(seed, label)``, so posteriors at
    different y from the same seed are translates of one another.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    u = model.noise.sample(stream(seed, task_id(label)), n)
    return FiducialPosterior(float(y), float(y) - u, model.noise,
                             _closed_form_tag(model.noise, float(y)))


def _as_focus(psi) -> Focus:
    if isinstance(psi, Focus):
        return psi
    if isinstance(psi, str):
        return focus(psi)
    return Focus("custom", lambda t: np.asarray(psi(t), dtype=float))


def posterior_point_estimate(post: FiducialPosterior, psi, *, closed_form: bool = True) -> float:
    """Posterior mean of psi(theta): closed form when known, else the sample mean."""
    f = _as_focus(psi)
    model = LocationModel(post.noise, f)
    if closed_form and post.closed_form is not None and model.has_closed_form():
        return float(model.posterior_mean(post.y))
    return float(np.mean(f(post.samples)))


@dataclass(frozen=True)
class PosteriorSummary:
    """Monte Carlo estimates from a sample posterior, with standard errors."""

    estimate: float
    estimate_stderr: float
    risk: float
    risk_stderr: float


def mc_summary(post: FiducialPosterior, psi, action: Optional[float] = None) -> PosteriorSummary:
    """Sample-mean estimate of E(psi) and of the posterior risk at ``action``.

    ``action`` defaults to the closed-form (or sample) point estimate.
    """
    f = _as_focus(psi)
    vals = f(post.samples)
    n = vals.size
    est = float(np.mean(vals))
    est_se = float(np.std(vals, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    if action is None:
        action = posterior_point_estimate(post, f)
    loss = (vals - action) ** 2
    r = float(np.mean(loss))
    r_se = float(np.std(loss, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return PosteriorSummary(est, est_se, r, r_se)


def posterior_risk_location(model: LocationModel, y: float, psi=None, *,
                            n: int = risk.DEFAULT_MC_SAMPLES, seed: int = DEFAULT_SEED,
                            closed_form: bool = True) -> float:
    """Posterior variance of psi(theta) at y, i.e. r^y of the optimal action."""
    f = model.psi if psi is None else _as_focus(psi)
    m = LocationModel(model.noise, f)
    if closed_form and m.has_closed_form():
        return float(m.posterior_variance(y))
    return mc_summary(fiducial_posterior(m, y, n, seed), f).risk


@dataclass(frozen=True)
class DivergenceDemo:
    curve: risk.RiskCurve
    posterior_risks: Tuple[Tuple[float, float, float, float], ...]  # (T, y, r^y, stderr)

    @property
    def diverged(self) -> bool:
        return self.curve.diverged


def divergence_demo(model: LocationModel, psi=None, truncations: Sequence[float] = (1, 10, 100),
                    *, n: int = risk.DEFAULT_MC_SAMPLES, seed: int = DEFAULT_SEED,
                    threads: int = 1) -> DivergenceDemo:
    """r(T) under the prior truncated to [-T, T], next to r^y from the same runs.

    The estimator is the flat-prior posterior mean.  r^y is estimated at
    y = 0 and y = T/2 with the untruncated posterior.
    """
    m = model if psi is None else LocationModel(model.noise, _as_focus(psi))
    if m.has_closed_form():
        phi = m.posterior_mean
    else:
        # common random numbers keep phi a deterministic function of y
        u = m.noise.sample(stream(seed, task_id("divergence_demo/phi")), 4096)
        phi = np.vectorize(lambda y: float(np.mean(m.psi(y - u))))
    curve = risk.truncated_risk_curve(m, phi, truncations, n=n, seed=seed, threads=threads)
    rows = []
    for T in curve.truncations:
        for y in (0.0, T / 2):
            post = fiducial_posterior(m, y, n, seed, label=f"divergence_demo/{T!r}/{y!r}")
            s = mc_summary(post, m.psi, float(np.asarray(phi(np.array([y])))[0]))
            rows.append((T, y, s.risk, s.risk_stderr))
    return DivergenceDemo(curve, tuple(rows))
