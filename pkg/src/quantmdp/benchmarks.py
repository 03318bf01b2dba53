"""Concrete models with explicit drift/minorization certificates and reference solutions.

Total variation uses the mass-2 convention ||P - Q||_TV = integral |p - q|
throughout, both when certifying kernel Lipschitz constants and when those
constants enter error bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import InputError, OracleUnstableError
from .finite_model import (FiniteMdp, ValueSolution, build_finite_model, discounted_vi,
                           extend_values, quantize_measure, relative_vi)
from .mdp import (Box, ContinuousMdp, LyapunovCertificate, MinorizationCertificate, OutsideBox,
                  UniformPolicy, as_batch, verify_drift)
from .quantizer import DiracAtRepresentative, GridQuantizer, build_uniform, set_median_representatives

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class BenchmarkSpec:
    name: str
    parameters: dict
    lyapunov: LyapunovCertificate
    minorization: Optional[MinorizationCertificate]
    derivations: dict
    initial_states: list
    probe_states: list

    def verify(self, mdp: ContinuousMdp, samples_per_probe: int = 20_000, seed: int = 0):
        return verify_drift(mdp, self.lyapunov, self.probe_states, samples_per_probe, seed)


@dataclass
class Benchmark:
    mdp: ContinuousMdp
    spec: BenchmarkSpec

    def __iter__(self):
        return iter((self.mdp, self.spec))


# ---------------------------------------------------------------- TV helpers

def gaussian_shift_tv(shift, sigma: float):
    """TV distance (mass-2) between N(m, s^2 I) and N(m + d, s^2 I): 2(2 Phi(|d|_2 / 2s) - 1)."""
    d = np.asarray(shift, dtype=float)
    r = np.sqrt(np.sum(d * d, axis=-1)) if d.ndim else abs(float(d))
    return 2.0 * (2.0 * stats.norm.cdf(r / (2.0 * sigma)) - 1.0)


def gaussian_tv_lipschitz(gain: float, sigma: float) -> float:
    """Lipschitz constant of x -> N(gain-scaled x, sigma^2) in TV per unit l1 distance.

    2(2 Phi(t) - 1) <= 4 t phi(0) gives the constant 2 gain / (sigma sqrt(2 pi)).
    """
    if gain == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    return 2.0 * gain / (sigma * _SQRT_2PI)


def numerical_tv_1d(pdf_p: Callable, pdf_q: Callable, lo: float, hi: float,
                    points: int = 200_001) -> float:
    """Trapezoid integral of |p - q| over [lo, hi]."""
    grid = np.linspace(lo, hi, points)
    return float(np.trapezoid(np.abs(pdf_p(grid) - pdf_q(grid)), grid))


def _young_split(a: float):
    """Pick eps for (s + t)^2 <= (1 + eps) s^2 + (1 + 1/eps) t^2 so that a^2 (1 + eps) < 1."""
    return 1.0 if 2.0 * a * a < 1.0 else (1.0 - a * a) / (2.0 * a * a)


def _cost_1norm(cap: float):
    def cost(x, u):
        r = np.minimum(np.abs(x).sum(axis=1), cap) / cap
        au = np.abs(u).sum(axis=1)
        return r + 0.1 * au / (1.0 + au)
    return cost


# ---------------------------------------------------------------- noise laws

@dataclass(frozen=True)
class UniformLaw:
    """Uniform distribution on [lo, hi) in one dimension."""

    lo: float = -1.0
    hi: float = 1.0

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=(size, 1))

    def box_mass(self, lo, hi) -> float:
        a, b = max(lo, self.lo), min(hi, self.hi)
        return max(b - a, 0.0) / (self.hi - self.lo)

    def abs_moment(self, m: float) -> float:
        def prim(x):  # antiderivative of |x|^m
            return math.copysign(abs(x) ** (m + 1) / (m + 1), x)
        return (prim(self.hi) - prim(self.lo)) / (self.hi - self.lo)


@dataclass(frozen=True)
class GaussianLaw:
    mean: float = 0.0
    sd: float = 1.0

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size=(size, 1))

    def box_mass(self, lo, hi) -> float:
        d = stats.norm(self.mean, self.sd)
        return float(d.cdf(hi) - d.cdf(lo))

    def abs_moment(self, m: float) -> float:
        if m != 2:
            raise InputError("only the second moment is available in closed form")
        return self.mean ** 2 + self.sd ** 2


# ---------------------------------------------------------------- linear Gaussian models

def _check_common(sigma, action_grid, cost_cap, beta):
    if not sigma > 0:
        raise InputError("sigma must be positive")
    if not cost_cap > 0:
        raise InputError("cost_cap must be positive")
    acts = np.asarray(action_grid, dtype=float).reshape(-1)
    if acts.size == 0:
        raise InputError("action grid is empty")
    if not 0 < beta < 1:
        raise InputError("beta must lie in (0, 1)")
    return acts


def _gauss_cert_1d(a, sigma, u_max):
    eps = _young_split(a)
    alpha = 1.0 - a * a * (1.0 + eps)
    b = sigma ** 2 + (1.0 + 1.0 / eps) * u_max ** 2
    text = (f"E[(ax+u+W)^2] = (ax+u)^2 + sigma^2 <= (1+eps) a^2 x^2 + (1+1/eps) u_max^2 + sigma^2 "
            f"with eps = {eps!r}: alpha = 1 - a^2 (1+eps) = {alpha!r}, "
            f"b = sigma^2 + (1+1/eps) u_max^2 = {b!r}")
    return alpha, b, text


def linear_gaussian_1d(a: float = 0.5, sigma: float = 1.0, action_grid=(-1.0, 0.0, 1.0),
                       cost_cap: float = 4.0, beta: float = 0.9) -> Benchmark:
    """X' = a X + u + W with W ~ N(0, sigma^2) and cost min(|x|, cap)/cap + 0.1 |u|/(1+|u|)."""
    if abs(a) >= 1:
        raise InputError(f"|a| = {abs(a)} >= 1: no drift certificate with V = x^2")
    acts = _check_common(sigma, action_grid, cost_cap, beta)
    u_max = float(np.abs(acts).max())
    alpha, b, text = _gauss_cert_1d(a, sigma, u_max)
    cert = LyapunovCertificate(2, alpha, b, text)

    def step(x, u, rng):
        return a * x + u + sigma * rng.standard_normal(x.shape)

    alpha_T = gaussian_tv_lipschitz(abs(a), sigma)
    mdp = ContinuousMdp(1, acts[:, None], step, _cost_1norm(cost_cap), 1.1, 1.0 / cost_cap,
                        alpha_T, beta, name="linear_gaussian_1d")
    derivations = {
        "lyapunov": text,
        "alpha_c": "min(|x|, cap)/cap is 1/cap-Lipschitz",
        "alpha_T": "||N(ax,s^2) - N(ax',s^2)||_TV = 2(2Phi(a|x-x'|/2s) - 1) <= 2a|x-x'|/(s sqrt(2pi))",
        "c_sup": "1 + 0.1 = 1.1",
    }
    probes = [[v] for v in (-8.0, -3.0, -1.0, 0.0, 0.5, 1.0, 3.0, 8.0)]
    params = dict(a=a, sigma=sigma, action_grid=acts.tolist(), cost_cap=cost_cap, beta=beta)
    return Benchmark(mdp, BenchmarkSpec("linear_gaussian_1d", params, cert, None, derivations,
                                        [[0.0], [2.0]], probes))


def linear_gaussian_minorized(a: float = 0.5, sigma: float = 1.0, lam: float = 0.1,
                              nu0=None, action_grid=(-1.0, 0.0, 1.0), cost_cap: float = 4.0,
                              beta: float = 0.9) -> Benchmark:
    """Mixture kernel (1 - lam) N(a x + u, sigma^2) + lam nu0, minorized by lam nu0.

    ``lam = 1`` is accepted and gives an i.i.d. chain with law ``nu0``.
    """
    if not 0 < lam <= 1:
        raise InputError("lam must lie in (0, 1]")
    if abs(a) >= 1:
        raise InputError(f"|a| = {abs(a)} >= 1: no drift certificate with V = x^2")
    nu0 = UniformLaw() if nu0 is None else nu0
    acts = _check_common(sigma, action_grid, cost_cap, beta)
    u_max = float(np.abs(acts).max())
    ag, bg, text_g = _gauss_cert_1d(a, sigma, u_max)
    s2 = nu0.abs_moment(2)
    alpha = 1.0 - (1.0 - lam) * (1.0 - ag)
    b = (1.0 - lam) * bg + lam * s2
    text = (f"mixture: E V' <= (1-lam)[(1-alpha_g) x^2 + b_g] + lam E_nu0[X^2]; Gaussian part: "
            f"{text_g}; E_nu0[X^2] = {s2!r}; alpha = 1 - (1-lam)(1-alpha_g) = {alpha!r}, "
            f"b = (1-lam) b_g + lam E_nu0[X^2] = {b!r}")
    cert = LyapunovCertificate(2, alpha, b, text)

    def gauss_step(x, u, rng):
        return a * x + u + sigma * rng.standard_normal(x.shape)

    def step(x, u, rng):
        out = gauss_step(x, u, rng)
        reset = rng.random(x.shape[0]) < lam
        if reset.any():
            out[reset] = nu0.sample(rng, int(reset.sum()))
        return out

    def mu_bin_mass(region):
        lo, hi = float(np.ravel(region.lo)[0]), float(np.ravel(region.hi)[0])
        inside = nu0.box_mass(lo, hi)
        return lam * (inside if isinstance(region, Box) else 1.0 - inside)

    minor = MinorizationCertificate(lam, lambda rng, size: nu0.sample(rng, size), mu_bin_mass,
                                    residual_step=gauss_step)
    alpha_T = (1.0 - lam) * gaussian_tv_lipschitz(abs(a), sigma)
    mdp = ContinuousMdp(1, acts[:, None], step, _cost_1norm(cost_cap), 1.1, 1.0 / cost_cap,
                        alpha_T, beta, name="linear_gaussian_minorized")
    derivations = {
        "lyapunov": text,
        "minorization": f"T >= lam nu0 with mass {lam!r}",
        "alpha_c": "min(|x|, cap)/cap is 1/cap-Lipschitz",
        "alpha_T": "the nu0 component cancels, leaving (1-lam) times the Gaussian constant",
        "c_sup": "1 + 0.1 = 1.1",
    }
    probes = [[v] for v in (-8.0, -3.0, -1.0, 0.0, 0.5, 1.0, 3.0, 8.0)]
    params = dict(a=a, sigma=sigma, lam=lam, nu0=repr(nu0), action_grid=acts.tolist(),
                  cost_cap=cost_cap, beta=beta)
    return Benchmark(mdp, BenchmarkSpec("linear_gaussian_minorized", params, cert, minor,
                                        derivations, [[0.0], [2.0]], probes))


def l1_induced_norm(A) -> float:
    """Induced l1 operator norm: the largest absolute column sum."""
    return float(np.abs(np.asarray(A, dtype=float)).sum(axis=0).max())


def linear_gaussian_2d(A=((0.5, 0.0), (0.0, 0.5)), sigma: float = 1.0,
                       action_grid=(-1.0, 0.0, 1.0), cost_cap: float = 4.0, beta: float = 0.9,
                       e=(1.0, 1.0)) -> Benchmark:
    """X' = A X + u e + W with W ~ N(0, sigma^2 I); requires ||A||_1 < 1 (induced l1 norm)."""
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2):
        raise InputError("A must be 2x2")
    e = np.asarray(e, dtype=float).reshape(2)
    na = l1_induced_norm(A)
    if na >= 1:
        raise InputError(f"||A||_1 = {na} >= 1: no drift certificate with V = ||x||_1^2")
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    if not cost_cap > 0 or not 0 < beta < 1:
        raise InputError("cost_cap must be positive and beta in (0, 1)")
    acts = np.asarray(action_grid, dtype=float).reshape(-1)
    if acts.size == 0:
        raise InputError("action grid is empty")
    u_max = float(np.abs(acts).max())
    # E||m + W||_1^2 <= (||m||_1 + 2 sigma)^2 since E|m_i + W_i| <= sqrt(m_i^2 + sigma^2) <= |m_i| + sigma
    t = u_max * float(np.abs(e).sum()) + 2.0 * sigma
    if t == 0:
        alpha, b, eps = 1.0 - na * na, 0.0, None
    else:
        eps = _young_split(na)
        alpha, b = 1.0 - na * na * (1.0 + eps), (1.0 + 1.0 / eps) * t * t
    text = (f"E||AX+ue+W||_1^2 <= (||A||_1 ||x||_1 + u_max ||e||_1 + 2 sigma)^2 with ||A||_1 = {na!r}; "
            f"Young with eps = {eps!r}: alpha = {alpha!r}, b = {b!r}")
    cert = LyapunovCertificate(2, min(alpha, 1.0), b, text)

    def step(x, u, rng):
        return x @ A.T + u[:, :1] * e[None, :] + sigma * rng.standard_normal(x.shape)

    alpha_T = gaussian_tv_lipschitz(na, sigma) if sigma > 0 else (0.0 if na == 0 else math.inf)
    mdp = ContinuousMdp(2, acts[:, None], step, _cost_1norm(cost_cap), 1.1, 1.0 / cost_cap,
                        alpha_T, beta, name="linear_gaussian_2d")
    derivations = {
        "lyapunov": text,
        "alpha_c": "min(||x||_1, cap)/cap is 1/cap-Lipschitz in l1",
        "alpha_T": ("TV of a Gaussian mean shift d is 2(2Phi(|d|_2/2s)-1) <= 2|d|_2/(s sqrt(2pi)) "
                    "and |A(x-x')|_2 <= |A(x-x')|_1 <= ||A||_1 |x-x'|_1"),
        "c_sup": "1 + 0.1 = 1.1",
    }
    probes = [list(p) for p in ((0.0, 0.0), (1.0, -1.0), (3.0, 3.0), (-5.0, 2.0), (8.0, -8.0))]
    params = dict(A=A.tolist(), sigma=sigma, action_grid=acts.tolist(), cost_cap=cost_cap,
                  beta=beta, e=e.tolist())
    return Benchmark(mdp, BenchmarkSpec("linear_gaussian_2d", params, cert, None, derivations,
                                        [[0.0, 0.0], [2.0, 2.0]], probes))


# ---------------------------------------------------------------- toy models

def constant_cost(c: float = 1.0, beta: float = 0.9, num_actions: int = 2) -> Benchmark:
    """Chain frozen at 0 with the same cost for every action; J = c / (1 - beta)."""
    if not c > 0:
        raise InputError("c must be positive")

    def step(x, u, rng):
        return np.zeros_like(x)

    def cost(x, u):
        return np.full(x.shape[0], float(c))

    mdp = ContinuousMdp(1, np.arange(num_actions, dtype=float)[:, None], step, cost, float(c),
                        0.0, 0.0, beta, name="constant_cost")
    cert = LyapunovCertificate(2, 1.0, 0.0, "X' = 0 so E V(X') = 0")
    spec = BenchmarkSpec("constant_cost", dict(c=c, beta=beta, num_actions=num_actions), cert,
                         None, {"lyapunov": cert.derivation}, [[0.0]], [[0.0], [1.0], [-4.0]])
    return Benchmark(mdp, spec)


def absorbing_zero(beta: float = 0.9, action_grid=(0.0, 1.0)) -> Benchmark:
    """X' = 0 regardless of x and u; cost min(|x|, 1) + 0.1 |u|/(1+|u|)."""
    acts = np.asarray(action_grid, dtype=float).reshape(-1)

    def step(x, u, rng):
        return np.zeros_like(x)

    mdp = ContinuousMdp(1, acts[:, None], step, _cost_1norm(1.0), 1.1, 1.0, 0.0, beta,
                        name="absorbing_zero")
    cert = LyapunovCertificate(2, 1.0, 0.0, "X' = 0 so E V(X') = 0")
    spec = BenchmarkSpec("absorbing_zero", dict(beta=beta, action_grid=acts.tolist()), cert, None,
                         {"lyapunov": cert.derivation}, [[0.0]], [[0.0], [1.0], [-4.0]])
    return Benchmark(mdp, spec)


def zero_cost(a: float = 0.5, sigma: float = 1.0, action_grid=(-1.0, 0.0, 1.0),
              beta: float = 0.9) -> Benchmark:
    """Linear Gaussian dynamics with identically zero cost (c_sup is nominally 1)."""
    base = linear_gaussian_1d(a, sigma, action_grid, 1.0, beta)

    def cost(x, u):
        return np.zeros(x.shape[0])

    mdp = ContinuousMdp(1, base.mdp.actions, base.mdp.step, cost, 1.0, 0.0, base.mdp.alpha_T,
                        beta, name="zero_cost")
    base.spec.name = "zero_cost"
    return Benchmark(mdp, base.spec)


BENCHMARKS = {
    "linear_gaussian_1d": linear_gaussian_1d,
    "linear_gaussian_minorized": linear_gaussian_minorized,
    "linear_gaussian_2d": linear_gaussian_2d,
    "constant_cost": constant_cost,
    "absorbing_zero": absorbing_zero,
    "zero_cost": zero_cost,
}


def make_benchmark(name: str, **params) -> Benchmark:
    try:
        ctor = BENCHMARKS[name]
    except KeyError:
        raise InputError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    return ctor(**params)


# ---------------------------------------------------------------- reference solutions

@dataclass
class ReferenceSolution:
    quantizer: GridQuantizer
    solution: ValueSolution
    value: Callable
    gain: Optional[float]
    coarse_gap: float
    tolerance: float
    probe_values: dict = field(default_factory=dict)


def _solve_at(mdp, criterion, k, hw, samples, samples_per_bin, seed, minorization, jobs):
    qz = build_uniform(mdp.n, k, hw)
    if samples is not None:
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            qz = set_median_representatives(qz, samples)
    fm = build_finite_model(mdp, qz, DiracAtRepresentative(), samples_per_bin, seed,
                            minorization=minorization, jobs=jobs)
    if criterion == "discounted":
        sol = discounted_vi(fm, mdp.beta, tol=1e-9)
    else:
        sol = relative_vi(fm, quantize_measure(minorization, qz), tol=1e-9)
    return qz, sol


def reference_solution(mdp: ContinuousMdp, criterion: str, k_ref: int, half_width_ref: float,
                       samples_per_bin: int, seed: int, probe_states: Sequence = ((0.0,),),
                       minorization: Optional[MinorizationCertificate] = None,
                       occupation_samples: int = 200_000, tolerance: Optional[float] = None,
                       max_k_under_test: Optional[int] = None,
                       max_half_width_under_test: Optional[float] = None,
                       jobs: int = 1) -> ReferenceSolution:
    """High-resolution finite-model solution used as a stand-in for the true optimum.

    Representatives are Dirac at weighted medians fitted from a long uniform
    exploration run.  The same construction at ``k_ref // 2`` must agree with
    ``k_ref`` within ``tolerance`` (default 0.01 c_sup/(1-beta) on probe values
    for the discounted criterion, 0.01 c_sup on the gain for the average one),
    otherwise :class:`OracleUnstableError` is raised.
    """
    if criterion not in ("discounted", "average"):
        raise InputError("criterion must be 'discounted' or 'average'")
    if criterion == "average" and minorization is None:
        raise InputError("average criterion needs a minorization certificate")
    if max_k_under_test is not None and k_ref < 8 * max_k_under_test:
        raise InputError(f"k_ref = {k_ref} is below 8 x {max_k_under_test}")
    if max_half_width_under_test is not None and half_width_ref < 2 * max_half_width_under_test:
        raise InputError(f"half_width_ref = {half_width_ref} is below 2 x {max_half_width_under_test}")
    if k_ref < 2:
        raise InputError("k_ref must be >= 2")
    if tolerance is None:
        tolerance = 0.01 * mdp.c_sup / ((1 - mdp.beta) if criterion == "discounted" else 1.0)
    samples = None
    if occupation_samples:
        from .analysis import invariant_occupation
        samples = invariant_occupation(mdp, UniformPolicy(mdp.num_actions), occupation_samples,
                                       seed=seed + 1, burn_in=1000)
    probes = as_batch(np.asarray(probe_states, dtype=float), mdp.n)
    fine_q, fine = _solve_at(mdp, criterion, k_ref, half_width_ref, samples, samples_per_bin,
                             seed, minorization, jobs)
    coarse_q, coarse = _solve_at(mdp, criterion, k_ref // 2, half_width_ref, samples,
                                 samples_per_bin, seed, minorization, jobs)
    vf, vc = extend_values(fine, fine_q), extend_values(coarse, coarse_q)
    if criterion == "discounted":
        gap = float(np.abs(vf(probes) - vc(probes)).max())
    else:
        gap = abs(fine.gain - coarse.gain)
    if gap > tolerance:
        raise OracleUnstableError(
            f"reference at k={k_ref} and k={k_ref // 2} differ by {gap:.4g} > {tolerance:.4g}"
        )
    pv = {tuple(float(v) for v in p): float(vf(p)) for p in probes}
    return ReferenceSolution(fine_q, fine, vf, fine.gain, gap, tolerance, pv)
