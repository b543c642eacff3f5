"""Gaussian-process Bayesian optimisation over (fit range a, polynomial degree D).

Inputs are mapped to the unit square: ``a`` on a log scale, ``D`` linearly.
Outputs are standardised before fitting.  The integer degree is handled by
enumerating all of its values; only ``a`` is optimised continuously.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import norm, qmc

from .errors import NumericError

log = logging.getLogger(__name__)

A_BOUNDS = (0.5, 50.0)
D_BOUNDS = (2, 9)
JITTER_CEILING = 1e-2


@dataclass
class KernelParams:
    signal_variance: float = 1.0
    length_scales: tuple = (0.3, 0.3)
    jitter: float = 1e-6

    def __post_init__(self):
        if not self.jitter > 0:
            raise ValueError("jitter must be positive")
        self.length_scales = tuple(float(l) for l in self.length_scales)


@dataclass
class Observation:
    a: float
    D: int
    objective: float
    wall_seconds: float = 0.0


@dataclass
class BayesOptState:
    observations: list = field(default_factory=list)
    kernel_params: KernelParams = field(default_factory=KernelParams)
    a_bounds: tuple = A_BOUNDS
    d_bounds: tuple = D_BOUNDS
    rng_seed: int = 0

    def encode(self, a, D):
        lo, hi = np.log(self.a_bounds[0]), np.log(self.a_bounds[1])
        u_a = (np.log(np.asarray(a, dtype=np.float64)) - lo) / (hi - lo)
        u_d = (np.asarray(D, dtype=np.float64) - self.d_bounds[0]) / (self.d_bounds[1] - self.d_bounds[0])
        return np.stack(np.broadcast_arrays(u_a, u_d), axis=-1)

    def decode_a(self, u):
        lo, hi = np.log(self.a_bounds[0]), np.log(self.a_bounds[1])
        return float(np.exp(lo + u * (hi - lo)))

    def in_bounds(self, a, D):
        return (self.a_bounds[0] <= a <= self.a_bounds[1]
                and self.d_bounds[0] <= D <= self.d_bounds[1] and int(D) == D)

    def add(self, a, D, objective, wall_seconds=0.0):
        if not self.in_bounds(a, D):
            raise ValueError(f"observation (a={a}, D={D}) outside the search bounds")
        self.observations.append(Observation(float(a), int(D), float(objective), float(wall_seconds)))

    def arrays(self):
        a = np.array([o.a for o in self.observations])
        d = np.array([o.D for o in self.observations])
        y = np.array([o.objective for o in self.observations])
        return a, d, y

    def best(self):
        if not self.observations:
            return None
        return max(self.observations, key=lambda o: o.objective)

    def best_so_far(self):
        return list(np.maximum.accumulate([o.objective for o in self.observations]))

    def write_log(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iter", "a", "D", "objective", "best_so_far", "wall_seconds"])
            for i, (o, b) in enumerate(zip(self.observations, self.best_so_far())):
                writer.writerow([i, repr(float(o.a)), o.D, repr(float(o.objective)), repr(float(b)),
                                 f"{o.wall_seconds:.3f}"])


def se_kernel(u, v, signal_variance, length_scales):
    diff = (u[:, None, :] - v[None, :, :]) / np.asarray(length_scales)
    return signal_variance * np.exp(-0.5 * np.sum(diff * diff, axis=-1))


def _cholesky(K, jitter):
    eye = np.eye(len(K))
    while jitter <= JITTER_CEILING:
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError("kernel matrix not positive definite even with maximal jitter")


class GPPosterior:
    """Exact GP regression on unit-square inputs with standardised outputs."""

    def __init__(self, U, y, params):
        self.U = np.asarray(U, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.params = params
        self.y_mean = float(y.mean())
        std = float(y.std())
        self.y_std = std if std > 0 else 1.0
        self.z = (y - self.y_mean) / self.y_std
        K = se_kernel(self.U, self.U, params.signal_variance, params.length_scales)
        self.chol, self.jitter = _cholesky(K, params.jitter)
        self.alpha = cho_solve((self.chol, True), self.z)

    @property
    def prior_mean(self):
        return self.y_mean

    @property
    def prior_variance(self):
        return self.params.signal_variance * self.y_std ** 2

    def predict_unit(self, Uq):
        """Posterior mean and variance (original output units) at unit-square points."""
        Uq = np.atleast_2d(np.asarray(Uq, dtype=np.float64))
        Ks = se_kernel(Uq, self.U, self.params.signal_variance, self.params.length_scales)
        mean = Ks @ self.alpha
        v = cho_solve((self.chol, True), Ks.T)
        var = self.params.signal_variance - np.sum(Ks * v.T, axis=1)
        var = np.maximum(var, 0.0)
        return self.y_mean + self.y_std * mean, var * self.y_std ** 2

    def log_marginal_likelihood(self):
        n = len(self.z)
        return float(-0.5 * self.z @ self.alpha - np.sum(np.log(np.diag(self.chol)))
                     - 0.5 * n * np.log(2 * np.pi))


def _lml(theta, U, y, jitter):
    params = KernelParams(float(np.exp(theta[0])), tuple(np.exp(theta[1:])), jitter)
    try:
        return GPPosterior(U, y, params).log_marginal_likelihood()
    except NumericError:
        return -np.inf


def fit_kernel_params(U, y, jitter, seed=0, restarts=4):
    """Maximise the log marginal likelihood over log signal variance and length scales."""
    bounds = [(np.log(1e-2), np.log(1e2)), (np.log(0.03), np.log(3.0)), (np.log(0.03), np.log(3.0))]
    rng = np.random.default_rng(seed)
    starts = [np.array([0.0, np.log(0.3), np.log(0.3)])]
    starts += [rng.uniform([b[0] for b in bounds], [b[1] for b in bounds]) for _ in range(restarts - 1)]
    best_theta, best_val = starts[0], -np.inf
    for theta0 in starts:
        res = minimize(lambda t: -_lml(t, U, y, jitter), theta0, method="L-BFGS-B", bounds=bounds)
        val = -res.fun
        if np.isfinite(val) and val > best_val:
            best_theta, best_val = res.x, val
    return KernelParams(float(np.exp(best_theta[0])), tuple(np.exp(best_theta[1:])), jitter)


def gp_fit(state, optimize=True):
    """Posterior for ``state``; with ``optimize`` the kernel hyperparameters are
    refit by maximum marginal likelihood and stored back on the state."""
    if not state.observations:
        raise ValueError("gp_fit needs at least one observation")
    a, d, y = state.arrays()
    U = state.encode(a, d)
    if optimize and len(y) >= 3 and np.ptp(y) > 0:
        state.kernel_params = fit_kernel_params(U, y, state.kernel_params.jitter,
                                                seed=state.rng_seed)
    return GPPosterior(U, y, state.kernel_params)


def ei_from_moments(mean, sigma, best):
    """Expected improvement for maximisation; equals max(mean - best, 0) where sigma == 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    improve = mean - best
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = improve / sigma
        ei = improve * norm.cdf(z) + sigma * norm.pdf(z)
    ei = np.where(sigma > 0, ei, np.maximum(improve, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(post, best, q, state=None):
    """EI at ``q = (a, D)``; ``state`` supplies the input encoding (default bounds otherwise)."""
    state = state or BayesOptState()
    mean, var = post.predict_unit(state.encode(q[0], q[1]))
    return float(ei_from_moments(mean, np.sqrt(var), best)[0])


def _is_duplicate(state, a, D):
    return any(o.D == D and math.isclose(o.a, a, rel_tol=1e-9) for o in state.observations)


def suggest_next(state, post=None, grid_size=200, refine=4):
    """Maximise EI by enumerating every degree against a log-spaced grid of ``a``,
    then refining the best few grid cells with a bounded 1-D search."""
    post = post or gp_fit(state)
    best = max(o.objective for o in state.observations)
    ua = np.linspace(0.0, 1.0, grid_size)
    degrees = np.arange(state.d_bounds[0], state.d_bounds[1] + 1)
    ud = (degrees - state.d_bounds[0]) / (state.d_bounds[1] - state.d_bounds[0])
    grid = np.array([(u, v) for v in ud for u in ua])
    mean, var = post.predict_unit(grid)
    sigma = np.sqrt(var)
    ei = ei_from_moments(mean, sigma, best)

    candidates = []
    for k in np.lexsort((sigma, ei))[::-1][:refine]:
        u0, v = grid[k]
        lo, hi = max(u0 - 1.0 / (grid_size - 1), 0.0), min(u0 + 1.0 / (grid_size - 1), 1.0)

        def neg_ei(u, v=v):
            m, s2 = post.predict_unit([[u, v]])
            return -float(ei_from_moments(m, np.sqrt(s2), best)[0])

        res = minimize_scalar(neg_ei, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-6})
        u_best = res.x if -res.fun >= ei[k] else u0
        m, s2 = post.predict_unit([[u_best, v]])
        candidates.append((-neg_ei(u_best), float(np.sqrt(s2[0])), u_best, v))
    for k in np.lexsort((sigma, ei))[::-1]:
        candidates.append((float(ei[k]), float(sigma[k]), grid[k][0], grid[k][1]))

    candidates.sort(key=lambda c: (c[0], c[1]), reverse=True)
    for _, _, u, v in candidates:
        a = min(max(state.decode_a(u), state.a_bounds[0]), state.a_bounds[1])
        D = int(round(state.d_bounds[0] + v * (state.d_bounds[1] - state.d_bounds[0])))
        if not _is_duplicate(state, a, D):
            return a, D
    raise NumericError("every candidate duplicates an existing observation")


def seed_points(n, seed, state):
    sampler = qmc.Halton(d=2, scramble=True, seed=seed)
    points = []
    for ua, ud in sampler.random(n):
        a = state.decode_a(ua)
        span = state.d_bounds[1] - state.d_bounds[0] + 1
        D = state.d_bounds[0] + min(int(ud * span), span - 1)
        points.append((a, D))
    return points


def _safe_eval(evaluator, a, D):
    try:
        value = float(evaluator(a, D))
    except Exception as exc:  # noqa: BLE001 - any failure scores 0
        log.warning("evaluator failed at a=%.4g D=%d: %s", a, D, exc)
        return 0.0
    return value if math.isfinite(value) else 0.0


def run_search(evaluator, n_seed=10, n_opt=40, seed=0, kernel_params=None, callback=None):
    """``n_seed`` quasi-random evaluations followed by ``n_opt`` EI-guided ones.

    A failing or non-finite evaluation is recorded with objective 0.
    """
    if n_seed < 1 or n_opt < 0:
        raise ValueError("need n_seed >= 1 and n_opt >= 0")
    state = BayesOptState(kernel_params=kernel_params or KernelParams(), rng_seed=seed)

    def observe(a, D):
        t0 = time.perf_counter()
        value = _safe_eval(evaluator, a, D)
        state.add(a, D, value, time.perf_counter() - t0)
        log.info("iter %d  a=%.4f D=%d  objective=%.4f", len(state.observations) - 1, a, D, value)
        if callback is not None:
            callback(state)

    for a, D in seed_points(n_seed, seed, state):
        observe(a, D)
    for _ in range(n_opt):
        observe(*suggest_next(state))
    return state
