"""One-dimensional Kalman-Bucy filtering on a uniform time grid.

Signal and observation::

    dGamma = F Gamma dt + C dU,      Gamma_0 ~ N(x0_mean, s0)
    dY     = G Gamma dt + D dV,      Y_0 = 0

Error variance (Riccati)::

    S' = 2 F S - (G^2 / D^2) S^2 + C^2,   S(0) = s0

Filter::

    dX = (F - G^2 S / D^2) X dt + (G S / D^2) dY,   X_0 = x0_mean

The filter mean X_t is E(Gamma_t | Y_s, s <= t), so its mean squared error
is S(t).  The Riccati equation is integrated by classical RK4; the SDEs by
Euler-Maruyama.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .rng import DEFAULT_SEED, parallel_chunks, stream, task_id

MIN_ENSEMBLE_PATHS = 100


class StepTooLarge(ArithmeticError):
    """Step halving could not keep the Riccati solution non-negative."""


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class KalmanBucyModel:
    F: float
    C: float
    G: float
    D: float
    s0: float = 0.0
    x0_mean: float = 0.0
    t_max: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("observation noise D must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_max < self.dt:
            raise ValueError("t_max must be at least dt")
        if self.s0 < 0:
            raise ValueError("initial variance s0 must be non-negative")
        n = self.t_max / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError("t_max must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def with_(self, **changes) -> "KalmanBucyModel":
        fields = dict(F=self.F, C=self.C, G=self.G, D=self.D, s0=self.s0,
                      x0_mean=self.x0_mean, t_max=self.t_max, dt=self.dt)
        fields.update(changes)
        return KalmanBucyModel(**fields)


def riccati_rhs(model: KalmanBucyModel, s: float) -> float:
    return 2.0 * model.F * s - (model.G / model.D) ** 2 * s * s + model.C ** 2


def stationary_variance(model: KalmanBucyModel) -> float:
    """Non-negative root of the Riccati right-hand side (inf if none)."""
    F, C, G, D = model.F, model.C, model.G, model.D
    if G == 0:
        return -C ** 2 / (2 * F) if F < 0 else math.inf
    a = (G / D) ** 2
    return (F + math.sqrt(F * F + a * C * C)) / a


@dataclass(frozen=True)
class RiccatiSolution:
    times: np.ndarray
    S: np.ndarray

    def gain(self, model: KalmanBucyModel) -> np.ndarray:
        """Observation gain G S / D^2 on the grid."""
        return model.G * self.S / model.D ** 2


def _rk4(model, s, h):
    k1 = riccati_rhs(model, s)
    k2 = riccati_rhs(model, s + 0.5 * h * k1)
    k3 = riccati_rhs(model, s + 0.5 * h * k2)
    k4 = riccati_rhs(model, s + h * k3)
    return s + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _guarded_step(model, s, h, tol, depth, max_halvings):
    nxt = _rk4(model, s, h)
    if nxt >= 0:
        return nxt
    if depth < max_halvings:
        mid = _guarded_step(model, s, h / 2, tol, depth + 1, max_halvings)
        return _guarded_step(model, mid, h / 2, tol, depth + 1, max_halvings)
    if nxt >= -tol:
        return 0.0
    raise StepTooLarge(f"S went to {nxt:.3g} after {max_halvings} halvings")


def solve_riccati(model: KalmanBucyModel, *, tol: float = 1e-12,
                  max_halvings: int = 20) -> RiccatiSolution:
    """Integrate the error-variance equation on the model grid by RK4.

    A step that lands below zero is redone as two half steps, recursively.

    Raises
    ------
    StepTooLarge
        If ``max_halvings`` halvings still leave S below ``-tol``.
    """
    n = model.n_steps
    S = np.empty(n + 1)
    S[0] = model.s0
    s = float(model.s0)
    for k in range(n):
        s = _guarded_step(model, s, model.dt, tol, 0, max_halvings)
        S[k + 1] = s
    return RiccatiSolution(model.times, S)


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathBundle:
    """Simulated signal paths and the noise that produced them.

    ``state`` has shape (paths, steps + 1); ``dY``, ``dU`` and ``dV`` have
    shape (paths, steps).
    """

    times: np.ndarray
    state: np.ndarray
    dY: np.ndarray
    dU: np.ndarray
    dV: np.ndarray


def draw_noise(model: KalmanBucyModel, rng: np.random.Generator, n_paths: int
               ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Initial states and Brownian increments (gamma0, dU, dV)."""
    gamma0 = model.x0_mean + math.sqrt(model.s0) * rng.standard_normal(n_paths)
    sd = math.sqrt(model.dt)
    dU = sd * rng.standard_normal((n_paths, model.n_steps))
    dV = sd * rng.standard_normal((n_paths, model.n_steps))
    return gamma0, dU, dV


def simulate_from_noise(model: KalmanBucyModel, gamma0, dU, dV) -> PathBundle:
    """Euler-Maruyama paths driven by the given increments."""
    dU = np.atleast_2d(dU)
    dV = np.atleast_2d(dV)
    if dU.shape[1] != model.n_steps or dV.shape != dU.shape:
        raise GridMismatch("increments do not match the model grid")
    paths = dU.shape[0]
    state = np.empty((paths, model.n_steps + 1))
    state[:, 0] = gamma0
    dY = np.empty_like(dU)
    a = 1.0 + model.F * model.dt
    for k in range(model.n_steps):
        g = state[:, k]
        dY[:, k] = model.G * g * model.dt + model.D * dV[:, k]
        state[:, k + 1] = a * g + model.C * dU[:, k]
    return PathBundle(model.times, state, dY, dU, dV)


def simulate_paths(model: KalmanBucyModel, seed: int = DEFAULT_SEED, n_paths: int = 1,
                   *, label: str = "simulate_paths") -> PathBundle:
    """Reproducible signal/observation paths for ``seed``."""
    rng = stream(seed, task_id(label))
    return simulate_from_noise(model, *draw_noise(model, rng, n_paths))


def coarsen(increments: np.ndarray) -> np.ndarray:
    """Sum consecutive pairs of increments: the same Brownian path at 2 dt."""
    inc = np.atleast_2d(increments)
    if inc.shape[1] % 2:
        raise GridMismatch("need an even number of increments")
    return inc[:, 0::2] + inc[:, 1::2]


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterRun:
    times: np.ndarray
    state: np.ndarray
    dY: np.ndarray
    estimate: np.ndarray

    @property
    def sq_error(self) -> np.ndarray:
        return (self.state - self.estimate) ** 2


def run_filter(model: KalmanBucyModel, dY, riccati: Optional[RiccatiSolution] = None,
               *, gain_scale: float = 1.0) -> np.ndarray:
    """Euler discretization of the Kalman-Bucy filter.

    With gain K = gain_scale * G S / D^2 this is
    X_{k+1} = X_k + F X_k dt + K_k (dY_k - G X_k dt).
    Works on a single path or a (paths, steps) array.
    """
    dY = np.asarray(dY, dtype=float)
    single = dY.ndim == 1
    dY = np.atleast_2d(dY)
    if dY.shape[1] != model.n_steps:
        raise GridMismatch(f"expected {model.n_steps} increments, got {dY.shape[1]}")
    if riccati is None:
        riccati = solve_riccati(model)
    if riccati.S.shape[0] != model.n_steps + 1:
        raise GridMismatch("Riccati solution is on a different grid")
    K = gain_scale * riccati.gain(model)
    dt = model.dt
    X = np.empty((dY.shape[0], model.n_steps + 1))
    X[:, 0] = model.x0_mean
    for k in range(model.n_steps):
        x = X[:, k]
        X[:, k + 1] = x + (model.F - model.G * K[k]) * x * dt + K[k] * dY[:, k]
    return X[0] if single else X


def filter_run(model: KalmanBucyModel, seed: int = DEFAULT_SEED) -> FilterRun:
    """Simulate one path and filter it."""
    paths = simulate_paths(model, seed)
    est = run_filter(model, paths.dY[0])
    return FilterRun(paths.times, paths.state[0], paths.dY[0], est)


def discrete_kalman(model: KalmanBucyModel, dY) -> np.ndarray:
    """Exact Kalman filter for the Euler-discretized system.

    State x_{k+1} = (1 + F dt) x_k + C dU_k, observation
    z_k = dY_k = G dt x_k + D dV_k.  Returns the one-step predicted means
    m_k = E(x_k | z_0..z_{k-1}), which sit on the same grid as the
    continuous filter.
    """
    dY = np.atleast_2d(np.asarray(dY, dtype=float))
    if dY.shape[1] != model.n_steps:
        raise GridMismatch("increments do not match the model grid")
    dt = model.dt
    a = 1.0 + model.F * dt
    h = model.G * dt
    r = model.D ** 2 * dt
    q = model.C ** 2 * dt
    m = np.empty((dY.shape[0], model.n_steps + 1))
    m[:, 0] = model.x0_mean
    P = model.s0
    for k in range(model.n_steps):
        K = P * h / (h * h * P + r)
        upd = m[:, k] + K * (dY[:, k] - h * m[:, k])
        P = (1.0 - K * h) * P
        m[:, k + 1] = a * upd
        P = a * a * P + q
    return m


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MSECurve:
    times: np.ndarray
    mse: np.ndarray
    stderr: np.ndarray
    S: np.ndarray
    n_paths: int


@dataclass(frozen=True)
class GainComparison:
    """Paired errors of the Riccati gain and a scaled gain on shared paths."""

    times: np.ndarray
    optimal: MSECurve
    alternative: MSECurve
    diff_mean: np.ndarray
    diff_stderr: np.ndarray
    gain_scale: float


def _moment_curve(sums, sq_sums, n):
    mean = sums / n
    var = np.maximum(sq_sums / n - mean ** 2, 0.0) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n)


def _ensemble(model, n_paths, seed, threads, scales, chunk):
    if n_paths < MIN_ENSEMBLE_PATHS:
        raise ValueError(f"ensembles need at least {MIN_ENSEMBLE_PATHS} paths")
    ric = solve_riccati(model)

    def work(rng, size):
        paths = simulate_from_noise(model, *draw_noise(model, rng, size))
        errs = [(paths.state - run_filter(model, paths.dY, ric, gain_scale=s)) ** 2
                for s in scales]
        out = []
        for e in errs:
            out.append((e.sum(axis=0), (e * e).sum(axis=0)))
        for e in errs[1:]:
            d = e - errs[0]
            out.append((d.sum(axis=0), (d * d).sum(axis=0)))
        return out

    parts = parallel_chunks(work, n_paths, seed=seed, label="kalman_ensemble",
                            chunk=chunk, threads=threads)
    totals = []
    for j in range(len(parts[0])):
        s = np.zeros(model.n_steps + 1)
        q = np.zeros(model.n_steps + 1)
        for p in parts:  # fixed chunk order
            s = s + p[j][0]
            q = q + p[j][1]
        totals.append(_moment_curve(s, q, n_paths))
    return ric, totals


def ensemble_mse(model: KalmanBucyModel, n_paths: int, seed: int = DEFAULT_SEED, *,
                 threads: int = 1, gain_scale: float = 1.0, chunk: int = 500) -> MSECurve:
    """Empirical E(Gamma_t - X_t)^2 over independent paths, next to S(t)."""
    ric, totals = _ensemble(model, n_paths, seed, threads, (gain_scale,), chunk)
    mse, se = totals[0]
    return MSECurve(model.times, mse, se, ric.S, n_paths)


def compare_gain(model: KalmanBucyModel, n_paths: int, gain_scale: float = 1.5,
                 seed: int = DEFAULT_SEED, *, threads: int = 1, chunk: int = 500
                 ) -> GainComparison:
    """Paired ensemble: Riccati gain vs ``gain_scale`` times it, same paths."""
    ric, totals = _ensemble(model, n_paths, seed, threads, (1.0, gain_scale), chunk)
    (m0, s0), (m1, s1), (dm, ds) = totals
    return GainComparison(model.times, MSECurve(model.times, m0, s0, ric.S, n_paths),
                          MSECurve(model.times, m1, s1, ric.S, n_paths), dm, ds, gain_scale)


def coupled_discrepancy(model: KalmanBucyModel, n_paths: int = 32,
                        seed: int = DEFAULT_SEED) -> Tuple[float, float]:
    """Filter-vs-discrete-Kalman gap at dt and at dt/2 on shared noise.

    Noise is drawn on the fine grid and summed in pairs for the coarse one.
    Returns the path-averaged max |X - m| for (dt, dt/2).
    """
    fine = model.with_(dt=model.dt / 2)
    rng = stream(seed, task_id("coupled_discrepancy"))
    gamma0, dU, dV = draw_noise(fine, rng, n_paths)
    gaps = []
    for m, u, v in ((model, coarsen(dU), coarsen(dV)), (fine, dU, dV)):
        paths = simulate_from_noise(m, gamma0, u, v)
        gap = np.abs(run_filter(m, paths.dY) - discrete_kalman(m, paths.dY)).max(axis=1)
        gaps.append(float(gap.mean()))
    return gaps[0], gaps[1]


def grid_indices(model: KalmanBucyModel, ts: Sequence[float]) -> np.ndarray:
    idx = np.rint(np.asarray(ts, dtype=float) / model.dt).astype(int)
    if np.any(idx < 0) or np.any(idx > model.n_steps):
        raise GridMismatch("requested time is off the grid")
    return idx
