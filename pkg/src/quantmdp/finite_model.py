"""Finite MDPs on quantized states: construction and dynamic-programming solvers."""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CertificateError, ConvergenceError, EvaluationError, InputError, ResourceError
from .mdp import ContinuousMdp, MinorizationCertificate, as_batch
from .quantizer import BinWeighting, Empirical, GridQuantizer
from .rng import stream

MAX_TENSOR_ENTRIES = 5 * 10**7
ROW_TOL = 1e-9
DOMINANCE_TOL = 1e-6
ROUNDING_TOL = 1e-12


@dataclass(frozen=True)
class FiniteMdp:
    """Effective cost ``cost[y, u]`` and kernel ``P[y, u, y']`` on M+1 bins."""

    cost: np.ndarray
    P: np.ndarray
    c_sup: float

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if c.ndim != 2 or P.shape != (c.shape[0], c.shape[1], c.shape[0]):
            raise InputError(f"inconsistent shapes cost {c.shape}, P {P.shape}")
        if P.min() < 0 or np.abs(P.sum(axis=2) - 1.0).max() > ROW_TOL:
            raise InputError("transition rows must be nonnegative and sum to 1")
        if c.min() < 0 or c.max() > self.c_sup + 1e-12:
            raise InputError(f"costs must lie in [0, {self.c_sup}]")
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "P", P)

    @property
    def num_states(self) -> int:
        return self.cost.shape[0]

    @property
    def num_actions(self) -> int:
        return self.cost.shape[1]

    def to_record(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "c_sup": self.c_sup,
            "cost": self.cost.tolist(),
            "transitions": self.P.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FiniteMdp":
        return cls(np.array(rec["cost"]), np.array(rec["transitions"]), rec["c_sup"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_record(), fh)

    @classmethod
    def load(cls, path) -> "FiniteMdp":
        with open(path) as fh:
            return cls.from_record(json.load(fh))


@dataclass
class ValueSolution:
    values: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float
    residuals: list = field(default_factory=list, repr=False)
    gain: Optional[float] = None
    h_bound_ok: Optional[bool] = None

    @property
    def relative_values(self):
        return self.values if self.gain is not None else None

    def observed_modulus(self, skip: int = 1) -> float:
        """Largest ratio of successive sup-norm residuals."""
        r = np.asarray(self.residuals[skip:])
        r_prev, r_next = r[:-1], r[1:]
        ok = r_prev > 1e-13
        if not ok.any():
            return 0.0
        return float((r_next[ok] / r_prev[ok]).max())


def build_finite_model(mdp: ContinuousMdp, qz: GridQuantizer, weighting: BinWeighting,
                       samples_per_bin: int, seed: int,
                       minorization: Optional[MinorizationCertificate] = None,
                       jobs: int = 1) -> FiniteMdp:
    """Monte Carlo estimate of the quantized cost and transition kernel.

    For every (bin, action) pair ``samples_per_bin`` states are drawn from the
    bin's weighting measure, one successor is sampled for each and the landing
    bins are counted.  Each pair uses its own stream derived from ``seed`` so
    the result does not depend on ``jobs``.

    With a minorization certificate carrying ``residual_step`` the rows are
    ``mu_hat + (1 - mass) * counts / samples`` where the counts come from the
    residual kernel, so every row dominates the quantized minorizing measure.
    """
    if samples_per_bin < 1:
        raise InputError("samples_per_bin must be >= 1")
    if qz.n != mdp.n:
        raise InputError("quantizer and model dimensions differ")
    S, A = qz.num_bins, mdp.num_actions
    if S * S * A > MAX_TENSOR_ENTRIES:
        raise ResourceError(f"transition tensor with {S * S * A} entries exceeds the cap")
    if isinstance(weighting, Empirical) and weighting.fallback is None:
        missing = weighting.missing(qz)
        if missing:
            raise EvaluationError(f"empirical weighting has empty bins: {missing}")
    split = minorization is not None and minorization.residual_step is not None
    if split:
        mu_hat = quantize_measure(minorization, qz)
        keep = 1.0 - minorization.mass

    cost = np.empty((S, A))
    P = np.zeros((S, A, S))

    def work(i):
        for a in range(A):
            rng = stream(seed, "model", i, a)
            xs = weighting.draw(qz, i, samples_per_bin, rng)
            u = np.full(samples_per_bin, a)
            cost[i, a] = mdp.stage_cost(xs, u).mean()
            if split and keep == 0.0:
                P[i, a] = mu_hat
                continue
            if split:
                nxt = minorization.residual_step(xs, mdp.actions[u], rng)
            else:
                nxt = mdp.sample_next(xs, u, rng)
            counts = np.bincount(qz.quantize_batch(as_batch(nxt, mdp.n)), minlength=S)
            row = counts / samples_per_bin
            P[i, a] = mu_hat + keep * row if split else row

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(work, range(S)))
    else:
        for i in range(S):
            work(i)
    # exact renormalization removes rounding drift from the counts
    P /= P.sum(axis=2, keepdims=True)
    return FiniteMdp(cost, P, mdp.c_sup)


def _greedy(qsa: np.ndarray) -> np.ndarray:
    return np.argmin(qsa, axis=1)


def discounted_vi(fmdp: FiniteMdp, beta: float, tol: float = 1e-8,
                  max_iter: int = 100_000) -> ValueSolution:
    """Value iteration with a stopping rule certifying sup-norm error <= tol."""
    if not 0 < beta < 1:
        raise InputError("beta must lie in (0, 1)")
    if tol <= 0:
        raise InputError("tol must be positive")
    stop = tol * (1.0 - beta) / (2.0 * beta)
    J = np.zeros(fmdp.num_states)
    residuals = []
    for it in range(1, max_iter + 1):
        qsa = fmdp.cost + beta * (fmdp.P @ J)
        J_new = qsa.min(axis=1)
        res = float(np.abs(J_new - J).max())
        residuals.append(res)
        J = J_new
        if res <= stop:
            policy = _greedy(fmdp.cost + beta * (fmdp.P @ J))
            return ValueSolution(J, policy, it, res, residuals)
    raise ConvergenceError(f"value iteration did not reach tolerance in {max_iter} iterations",
                           residual=residuals[-1], iterations=max_iter)


def check_dominance(fmdp: FiniteMdp, mu_hat: np.ndarray) -> FiniteMdp:
    """Ensure every row of P dominates ``mu_hat``; clip tiny violations."""
    deficit = float((mu_hat[None, None, :] - fmdp.P).max())
    if deficit > DOMINANCE_TOL:
        raise CertificateError(
            f"finite model rows fall below the minorizing measure by {deficit:.3g}"
        )
    if deficit <= ROUNDING_TOL:
        return fmdp
    warnings.warn(f"clipping minorization deficit of {deficit:.3g}", stacklevel=3)
    mass = mu_hat.sum()
    excess = np.maximum(fmdp.P - mu_hat, 0.0)
    excess *= (1.0 - mass) / np.maximum(excess.sum(axis=2, keepdims=True), 1e-300)
    return FiniteMdp(fmdp.cost, mu_hat + excess, fmdp.c_sup)


def relative_vi(fmdp: FiniteMdp, mu_hat, tol: float = 1e-8,
                max_iter: int = 100_000) -> ValueSolution:
    """Relative value iteration for the average-cost optimality equation.

    Iterates h <- min_u {C + P h} - <h, mu_hat>, a sup-norm contraction with
    modulus 1 - sum(mu_hat) when every row of P dominates ``mu_hat``.  The
    gain is <h, mu_hat> at the fixed point.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    if mu_hat.shape != (fmdp.num_states,) or mu_hat.min() < 0:
        raise InputError("mu_hat must be a nonnegative vector over the bins")
    mass = float(mu_hat.sum())
    if not 0 < mass <= 1 + 1e-12:
        raise InputError("mu_hat must have total mass in (0, 1]")
    fmdp = check_dominance(fmdp, mu_hat)
    rho = 1.0 - mass
    stop = tol * mass / rho if rho > 0 else np.inf
    h = np.zeros(fmdp.num_states)
    residuals = []
    for it in range(1, max_iter + 1):
        h_new = (fmdp.cost + fmdp.P @ h).min(axis=1) - h @ mu_hat
        res = float(np.abs(h_new - h).max())
        residuals.append(res)
        h = h_new
        if res <= stop or res == 0.0:
            policy = _greedy(fmdp.cost + fmdp.P @ h)
            gain = float(h @ mu_hat)
            ok = bool(np.abs(h).max() <= fmdp.c_sup / mass + tol)
            return ValueSolution(h, policy, it, res, residuals, gain=gain, h_bound_ok=ok)
    raise ConvergenceError(f"relative value iteration did not converge in {max_iter} iterations",
                           residual=residuals[-1], iterations=max_iter)


def extend_values(sol: ValueSolution, qz: GridQuantizer):
    """Piecewise-constant extension x -> values[q(x)]."""
    if sol.values.shape[0] != qz.num_bins:
        raise InputError("solution size does not match the quantizer")
    values = sol.values

    def value(x):
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1 and x.size == qz.n:
            return float(values[qz.quantize(x)])
        return values[qz.quantize_batch(x)]

    return value


def quantize_measure(cert: MinorizationCertificate, qz: GridQuantizer) -> np.ndarray:
    """Push the minorizing measure through the quantizer: mu_hat[i] = mu(B_i)."""
    mu_hat = np.array([float(cert.mu_bin_mass(qz.region(i))) for i in range(qz.num_bins)])
    if mu_hat.min() < 0:
        raise CertificateError("minorizing measure assigned negative mass to a bin")
    if abs(mu_hat.sum() - cert.mass) > 1e-9:
        raise CertificateError(
            f"bin masses sum to {mu_hat.sum()!r}, certificate mass is {cert.mass!r}"
        )
    return mu_hat
