"""Occupation measures, expected quantization loss, error bounds and rate fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateRegionError, InputError
from .mdp import ContinuousMdp, LyapunovCertificate, StationaryPolicy, as_batch, as_state, simulate
from .quantizer import BinWeighting, GridQuantizer, loss_batch, size_for_average, size_for_discounted
from .rng import stream


@dataclass
class OccupationSample:
    """Weighted states approximating a discounted occupation or invariant measure.

    For the discounted kind the measure is the normalized one; the
    unnormalized discounted occupation measure is ``weights / (1 - beta)``.
    """

    states: np.ndarray
    weights: np.ndarray
    kind: str
    policy_id: str
    seed: int
    normalized: bool = True

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise InputError("occupation weights must be nonnegative")
        if self.normalized and abs(self.weights.sum() - 1.0) > 1e-9:
            raise InputError("normalized occupation sample must have weights summing to 1")

    def __len__(self):
        return self.states.shape[0]

    def bin_frequencies(self, qz: GridQuantizer) -> np.ndarray:
        return np.bincount(qz.quantize_batch(self.states), weights=self.weights,
                           minlength=qz.num_bins)


def discounted_occupation(mdp: ContinuousMdp, policy: StationaryPolicy, beta: float, x0,
                          n_samples: int, seed: int) -> OccupationSample:
    """Sample the normalized discounted occupation measure from ``x0``.

    Each sample is X_T of a fresh trajectory stopped at an independent
    T ~ Geometric(1 - beta) on {0, 1, ...}; P(T = t) = (1 - beta) beta^t
    makes X_T an exact draw.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    if not 0 < beta < 1:
        raise InputError("beta must lie in (0, 1)")
    x0 = as_state(x0, mdp.n)
    stops = stream(seed, "horizon").geometric(1.0 - beta, size=n_samples) - 1
    dyn, pol = stream(seed, "dynamics"), stream(seed, "policy")
    x = np.repeat(x0[None, :], n_samples, axis=0)
    active = np.flatnonzero(stops > 0)
    t = 0
    while active.size:
        u = policy.act(x[active], pol)
        x[active] = mdp.sample_next(x[active], u, dyn)
        t += 1
        active = active[stops[active] > t]
    w = np.full(n_samples, 1.0 / n_samples)
    return OccupationSample(x, w, "discounted", policy.policy_id, seed)


def invariant_occupation(mdp: ContinuousMdp, policy: StationaryPolicy, n_samples: int,
                         seed: int, burn_in: int = 10_000, thinning: int = 1,
                         x0=None) -> OccupationSample:
    """Ergodic-average sample of the invariant measure along one trajectory."""
    if n_samples < 1 or thinning < 1 or burn_in < 0:
        raise InputError("need n_samples >= 1, thinning >= 1, burn_in >= 0")
    x0 = np.zeros(mdp.n) if x0 is None else as_state(x0, mdp.n)
    horizon = burn_in + n_samples * thinning
    traj = simulate(mdp, policy, x0, horizon, seed)
    states = traj.path[burn_in + thinning: horizon + 1: thinning][:n_samples]
    w = np.full(states.shape[0], 1.0 / states.shape[0])
    return OccupationSample(states, w, "invariant", policy.policy_id, seed)


def expected_loss(samples: OccupationSample, qz: GridQuantizer, weighting: BinWeighting):
    """Weighted mean of the loss over the samples, with its standard error."""
    L = loss_batch(qz, weighting, samples.states)
    w = samples.weights / samples.weights.sum()
    est = float(w @ L)
    se = float(np.sqrt(np.sum(w * w * (L - est) ** 2)))
    return est, se


def ergodicity_check(a: OccupationSample, b: OccupationSample, qz: GridQuantizer,
                     z: float = 3.0):
    """Compare bin histograms of two invariant samples bin by bin.

    Returns ``(passed, max_z)`` where ``max_z`` is the largest standardized
    difference of bin frequencies (binomial standard errors).
    """
    fa, fb = a.bin_frequencies(qz), b.bin_frequencies(qz)
    var = fa * (1 - fa) / len(a) + fb * (1 - fb) / len(b)
    diff = np.abs(fa - fb)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(var > 0, diff / np.sqrt(var), np.where(diff > 0, np.inf, 0.0))
    mz = float(zs.max())
    return mz <= z, mz


@dataclass
class BoundReport:
    prefactor: float
    loss_term: float
    total: float
    formula_id: str
    inputs: dict
    details: dict = field(default_factory=dict)


def discounted_prefactor(alpha_c: float, alpha_T: float, c_sup: float, beta: float) -> float:
    return alpha_c + beta * alpha_T * c_sup / (1.0 - beta)


def average_prefactor(alpha_c: float, alpha_T: float, c_sup: float, mu_mass: float) -> float:
    return alpha_c + alpha_T * c_sup / mu_mass


def _report(prefactor, loss_term, formula_id, inputs, **details) -> BoundReport:
    return BoundReport(prefactor, loss_term, prefactor * loss_term, formula_id, inputs, details)


def _max_policy(loss_integrals):
    items = list(loss_integrals)
    if not items:
        raise InputError("need at least one (policy, loss integral) pair")
    best = max(range(len(items)), key=lambda i: items[i][1])
    return items, items[best][0], float(items[best][1])


_SUP_CAVEAT = ("maximum over the supplied policies only; it lower-bounds the supremum "
               "over all stationary policies")


def bound_discounted_occupation(alpha_c, alpha_T, c_sup, beta, loss_integrals) -> BoundReport:
    """Occupation-measure bound: prefactor * max_policy integral(L dmu_beta) / (1 - beta)."""
    items, arg, worst = _max_policy(loss_integrals)
    pre = discounted_prefactor(alpha_c, alpha_T, c_sup, beta)
    inputs = dict(alpha_c=alpha_c, alpha_T=alpha_T, c_sup=c_sup, beta=beta)
    return _report(pre, worst / (1.0 - beta), "discounted_occupation", inputs,
                   per_policy=dict(items), maximizer=arg, caveat=_SUP_CAVEAT)


def bound_average_occupation(alpha_c, alpha_T, c_sup, mu_mass, loss_integrals) -> BoundReport:
    """Invariant-measure bound: (alpha_c + alpha_T c_sup / mu(X)) * max_policy integral(L dpi)."""
    if not 0 < mu_mass <= 1:
        raise InputError("mu_mass must lie in (0, 1]")
    items, arg, worst = _max_policy(loss_integrals)
    pre = average_prefactor(alpha_c, alpha_T, c_sup, mu_mass)
    inputs = dict(alpha_c=alpha_c, alpha_T=alpha_T, c_sup=c_sup, mu_mass=mu_mass)
    return _report(pre, worst, "average_occupation", inputs,
                   per_policy=dict(items), maximizer=arg, caveat=_SUP_CAVEAT)


def bins_per_axis(M: int, n: int) -> int:
    k = int(round(M ** (1.0 / n)))
    for cand in (k - 1, k, k + 1):
        if cand >= 1 and cand ** n == M:
            return cand
    raise InputError(f"M = {M} is not a perfect {n}-th power")


def _rate(M, n, m):
    return M ** ((1.0 / n) * (1.0 - 1.0 / m))


def _lyapunov_discounted(coef, formula_id, cert, M, n, beta, x0, alpha_c, alpha_T, c_sup):
    k = bins_per_axis(M, n)
    C = cert.moment_constant(beta, x0)
    pre = discounted_prefactor(alpha_c, alpha_T, c_sup, beta)
    term = coef * C ** (1.0 / cert.m) / (_rate(M, n, cert.m) * (1.0 - beta))
    try:
        sizing = size_for_discounted(cert, k, beta, x0)[0]
    except DegenerateRegionError:
        sizing = None
    inputs = dict(m=cert.m, alpha=cert.alpha, b=cert.b, M=M, n=n, beta=beta,
                  x0=[float(v) for v in np.atleast_1d(x0)], alpha_c=alpha_c,
                  alpha_T=alpha_T, c_sup=c_sup)
    return _report(pre, term, formula_id, inputs, C=C, k=k, half_width=sizing)


def bound_lyapunov_discounted(cert: LyapunovCertificate, M: int, n: int, beta: float, x0,
                              alpha_c, alpha_T, c_sup) -> BoundReport:
    """Planning bound with a Lyapunov-sized uniform quantizer; coefficient 2n + 1."""
    return _lyapunov_discounted(2 * n + 1, "lyapunov_discounted", cert, M, n, beta, x0,
                                alpha_c, alpha_T, c_sup)


def bound_learning(cert: LyapunovCertificate, M: int, n: int, beta: float, x0,
                   alpha_c, alpha_T, c_sup) -> BoundReport:
    """Bound for quantized Q-learning / empirical model learning; coefficient 4."""
    return _lyapunov_discounted(4, "lyapunov_learning", cert, M, n, beta, x0,
                                alpha_c, alpha_T, c_sup)


def bound_lyapunov_average(cert: LyapunovCertificate, M: int, n: int, mu_mass: float,
                           alpha_c, alpha_T, c_sup) -> BoundReport:
    """Average-cost bound; ``cert.b`` is the average-form drift constant."""
    if not 0 < mu_mass <= 1:
        raise InputError("mu_mass must lie in (0, 1]")
    if cert.b <= 0:
        raise InputError("average-cost bound needs b > 0")
    k = bins_per_axis(M, n)
    pre = average_prefactor(alpha_c, alpha_T, c_sup, mu_mass)
    term = (2 * n + 1) * cert.b ** (1.0 / cert.m) / _rate(M, n, cert.m)
    inputs = dict(m=cert.m, b=cert.b, M=M, n=n, mu_mass=mu_mass, alpha_c=alpha_c,
                  alpha_T=alpha_T, c_sup=c_sup)
    return _report(pre, term, "lyapunov_average", inputs, k=k,
                   half_width=size_for_average(cert, k))


@dataclass
class OverflowReport:
    mass: float
    std_error: float
    cap: float
    passed: bool           # mass <= cap + 3 SE
    raw_passed: bool       # mass <= cap


def overflow_mass_check(samples: OccupationSample, qz: GridQuantizer,
                        cert: Optional[LyapunovCertificate], k: int) -> OverflowReport:
    """Empirical overflow mass against the Markov-inequality cap 1/k."""
    w = samples.weights / samples.weights.sum()
    over = qz.quantize_batch(samples.states) == qz.overflow_index
    p = float(w[over].sum())
    n_eff = 1.0 / float(np.sum(w * w))
    se = math.sqrt(p * (1 - p) / n_eff)
    cap = 1.0 / k
    return OverflowReport(p, se, cap, p <= cap + 3 * se, p <= cap)


def rate_fit(points):
    """Least-squares line through (log M, log value); returns (slope, intercept, rms residual)."""
    pts = [(float(M), float(v)) for M, v in points]
    if len(pts) < 3:
        raise InputError("rate_fit needs at least 3 points")
    Ms = np.array([p[0] for p in pts])
    vs = np.array([p[1] for p in pts])
    if np.unique(Ms).size != Ms.size:
        raise InputError("rate_fit needs distinct M values")
    if np.any(vs <= 0) or np.any(Ms <= 0):
        raise InputError("rate_fit needs positive values")
    X = np.column_stack([np.log(Ms), np.ones_like(Ms)])
    y = np.log(vs)
    (slope, intercept), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ np.array([slope, intercept])
    return float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2)))


@dataclass
class MedianReport:
    median: np.ndarray
    median_value: float
    brute_force_point: np.ndarray
    brute_force_value: float
    gap: float             # median_value - brute_force_value; <= 0 up to rounding


def _abs_dev(grid, v, w):
    # sum_j w_j |g - v_j| for each grid value g, via prefix sums
    order = np.argsort(v)
    v, w = v[order], w[order]
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwv = np.concatenate([[0.0], np.cumsum(w * v)])
    j = np.searchsorted(v, grid, side="right")
    return grid * cw[j] - cwv[j] + (cwv[-1] - cwv[j]) - grid * (cw[-1] - cw[j])


def median_optimality_check(bin_samples, weights=None, grid_resolution: int = 10_000) -> MedianReport:
    """Compare the coordinate-wise weighted median with a brute-force grid minimum
    of E||X - y||_1 over ``grid_resolution`` candidates per axis spanning the samples."""
    from .quantizer import weighted_median

    x = np.asarray(bin_samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 1:
        raise InputError("need at least one sample")
    w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    n = x.shape[1]
    med = np.array([weighted_median(x[:, d], w) for d in range(n)])
    med_val = float(np.abs(x - med).sum(axis=1) @ w)
    best_pt = np.empty(n)
    best_val = 0.0
    for d in range(n):
        grid = np.linspace(x[:, d].min(), x[:, d].max(), grid_resolution)
        f = _abs_dev(grid, x[:, d], w)
        j = int(np.argmin(f))
        best_pt[d] = grid[j]
        best_val += float(f[j])
    return MedianReport(med, med_val, best_pt, best_val, med_val - best_val)


def joint_grid_minimum(bin_samples, weights, resolution: int):
    """Exhaustive minimum of E||X - y||_1 over a full n-dimensional product grid."""
    x = np.asarray(bin_samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    axes = [np.linspace(x[:, d].min(), x[:, d].max(), resolution) for d in range(x.shape[1])]
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, x.shape[1])
    vals = np.array([np.abs(x - c).sum(axis=1) @ w for c in cand])
    j = int(np.argmin(vals))
    return cand[j], float(vals[j])
