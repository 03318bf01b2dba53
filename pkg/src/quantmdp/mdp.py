"""Continuous-state controlled Markov models, policies and simulation.

States are float vectors of length ``n``; batches of states are arrays of
shape ``(B, n)``.  Actions form a finite list; each action is identified by
its index and carries a real payload vector that the model's ``step`` and
``cost`` callables receive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InputError
from .rng import stream

StepFn = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
CostFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_COST_TOL = 1e-12


def as_state(x, n: int) -> np.ndarray:
    """Validate a single state and return it as a float vector of length n."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.shape != (n,):
        raise InputError(f"state has shape {arr.shape}, expected ({n},)")
    return arr


def as_batch(x, n: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1 and n == 1:
        arr = arr[:, None]
    elif arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != n:
        raise InputError(f"state batch has shape {arr.shape}, expected (B, {n})")
    return arr


@dataclass(frozen=True)
class ContinuousMdp:
    """A controlled Markov model on a subset of R^n with a finite action set.

    ``step(x, u, rng)`` maps a state batch ``(B, n)`` and action payload batch
    ``(B, p)`` to next states ``(B, n)``; ``cost(x, u)`` returns ``(B,)``
    values in ``[0, c_sup]``.  ``alpha_c`` and ``alpha_T`` are Lipschitz
    constants in the l1 norm for the cost and (total variation, mass-2
    convention) for the kernel.
    """

    n: int
    actions: np.ndarray
    step: StepFn
    cost: CostFn
    c_sup: float
    alpha_c: float
    alpha_T: float
    beta: float
    name: str = "custom"

    def __post_init__(self):
        if int(self.n) < 1:
            raise InputError("state dimension n must be >= 1")
        acts = np.asarray(self.actions, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        if acts.ndim != 2 or acts.shape[0] == 0:
            raise InputError("actions must be a non-empty finite list")
        object.__setattr__(self, "actions", acts)
        if not 0.0 < self.beta < 1.0:
            raise InputError(f"discount factor must lie in (0, 1), got {self.beta}")
        if not self.c_sup > 0:
            raise InputError("c_sup must be positive")
        if self.alpha_c < 0 or self.alpha_T < 0:
            raise InputError("Lipschitz constants must be nonnegative")

    @property
    def num_actions(self) -> int:
        return self.actions.shape[0]

    def sample_next(self, x: np.ndarray, u_idx: np.ndarray, rng) -> np.ndarray:
        return np.asarray(self.step(x, self.actions[u_idx], rng), dtype=float).reshape(x.shape)

    def stage_cost(self, x: np.ndarray, u_idx: np.ndarray) -> np.ndarray:
        c = np.asarray(self.cost(x, self.actions[u_idx]), dtype=float).reshape(x.shape[0])
        if c.size and (c.min() < -_COST_TOL or c.max() > self.c_sup + _COST_TOL):
            raise InputError(
                f"cost outside [0, {self.c_sup}]: observed range [{c.min()}, {c.max()}]"
            )
        return c


@dataclass(frozen=True)
class LyapunovCertificate:
    """Drift certificate E[V(X')|x,u] <= (1 - alpha) V(x) + b for V = ||x||_1^m."""

    m: float
    alpha: float
    b: float
    derivation: str = ""

    def __post_init__(self):
        if not self.m > 1:
            raise InputError("moment exponent m must exceed 1")
        if not 0 < self.alpha <= 1:
            raise InputError("alpha must lie in (0, 1]")
        if self.b < 0:
            raise InputError("b must be nonnegative")

    def V(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.sum(np.abs(x), axis=-1) ** self.m

    def moment_constant(self, beta: float, x0) -> float:
        """Bound on the m-th moment of the normalized discounted occupation measure from x0."""
        v0 = float(np.sum(np.abs(np.asarray(x0, dtype=float)))) ** self.m
        return (v0 * (1.0 - beta) + self.b * beta) / (1.0 - beta * (1.0 - self.alpha))

    def average_form(self) -> "LyapunovCertificate":
        """Certificate whose ``b`` is the drift constant of the average-cost form.

        With V' = V / alpha the drift reads E[V'(X')] <= V'(x) - ||x||_1^m + b / alpha,
        so every invariant measure has m-th moment at most b / alpha.
        """
        return LyapunovCertificate(
            m=self.m,
            alpha=self.alpha,
            b=self.b / self.alpha,
            derivation=f"average form: b_avg = b / alpha = {self.b} / {self.alpha}",
        )


@dataclass(frozen=True)
class Box:
    """Half-open hyper-rectangle [lo, hi)."""

    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True)
class OutsideBox:
    """Complement of the half-open box [lo, hi)."""

    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True)
class MinorizationCertificate:
    """T(.|x,u) >= mu(.) for all (x,u), with mu of total mass ``mass``.

    ``mu_sampler(rng, size)`` draws ``(size, n)`` states from mu / mass and
    ``mu_bin_mass(region)`` evaluates mu on a ``Box`` or ``OutsideBox``.
    ``residual_step`` optionally samples the normalized remainder
    (T - mu) / (1 - mass); when present, finite models are built with exact
    row-wise dominance of the quantized mu.
    """

    mass: float
    mu_sampler: Callable[[np.random.Generator, int], np.ndarray]
    mu_bin_mass: Callable[[object], float]
    residual_step: Optional[StepFn] = None

    def __post_init__(self):
        if not 0 < self.mass <= 1:
            raise InputError("minorizing mass must lie in (0, 1]")


class StationaryPolicy:
    """Map from states to action indices, possibly randomized."""

    policy_id = "policy"
    state_independent = False

    def act(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, rng=None) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return int(self.act(x[None, :], rng if rng is not None else stream(0))[0])


class ConstantPolicy(StationaryPolicy):
    state_independent = True

    def __init__(self, action: int, num_actions: int):
        if not 0 <= action < num_actions:
            raise InputError(f"action index {action} outside [0, {num_actions})")
        self.action = int(action)
        self.num_actions = num_actions
        self.policy_id = f"constant[{action}]"

    def act(self, x, rng):
        return np.full(x.shape[0], self.action, dtype=np.int64)


class UniformPolicy(StationaryPolicy):
    """Uniform over the action set, independent of the state."""

    state_independent = True

    def __init__(self, num_actions: int):
        if num_actions < 1:
            raise InputError("need at least one action")
        self.num_actions = num_actions
        self.policy_id = "uniform"

    def act(self, x, rng):
        return rng.integers(0, self.num_actions, size=x.shape[0])


class TablePolicy(StationaryPolicy):
    """Deterministic policy that looks up an action per quantizer bin."""

    def __init__(self, quantizer, table, policy_id: str = "table"):
        self.quantizer = quantizer
        self.table = np.asarray(table, dtype=np.int64)
        if self.table.shape != (quantizer.num_bins,):
            raise InputError("policy table must have one entry per bin")
        self.policy_id = policy_id

    def act(self, x, rng):
        return self.table[self.quantizer.quantize_batch(x)]


class FunctionPolicy(StationaryPolicy):
    """Wrap a user rule ``f(x_batch, rng) -> action indices``."""

    def __init__(self, fn, num_actions: int, policy_id: str = "function",
                 state_independent: bool = False):
        self.fn = fn
        self.num_actions = num_actions
        self.policy_id = policy_id
        self.state_independent = state_independent

    def act(self, x, rng):
        u = np.asarray(self.fn(x, rng), dtype=np.int64).reshape(x.shape[0])
        if u.size and (u.min() < 0 or u.max() >= self.num_actions):
            raise InputError("policy returned an action index out of range")
        return u


def default_policy_set(num_actions: int) -> list[StationaryPolicy]:
    """Each constant-action policy followed by uniform exploration."""
    return [ConstantPolicy(a, num_actions) for a in range(num_actions)] + [
        UniformPolicy(num_actions)
    ]


@dataclass(frozen=True)
class Trajectory:
    """A simulated path: ``path[t]`` is X_t for t = 0..T."""

    path: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.actions.shape[0]

    @property
    def states(self) -> np.ndarray:
        return self.path[:-1]

    @property
    def next_states(self) -> np.ndarray:
        return self.path[1:]

    def records(self):
        for t in range(len(self)):
            yield self.path[t], int(self.actions[t]), float(self.costs[t]), self.path[t + 1]

    def prefix(self, length: int) -> "Trajectory":
        return Trajectory(self.path[: length + 1], self.actions[:length],
                          self.costs[:length], self.seed, dict(self.meta))

    def write_log(self, fh) -> None:
        """Append one line per transition: t, x, u, c, x'."""
        for t in range(len(self)):
            x = " ".join(repr(float(v)) for v in self.path[t])
            xn = " ".join(repr(float(v)) for v in self.path[t + 1])
            fh.write(f"{t},{x},{int(self.actions[t])},{float(self.costs[t])!r},{xn}\n")


def simulate(mdp: ContinuousMdp, policy: StationaryPolicy, x0, horizon: int,
             seed: int) -> Trajectory:
    """Run the controlled chain for exactly ``horizon`` transitions."""
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    x = as_state(x0, mdp.n)
    dyn_rng = stream(seed, "dynamics")
    pol_rng = stream(seed, "policy")
    path = np.empty((horizon + 1, mdp.n))
    path[0] = x
    if policy.state_independent:
        actions = np.asarray(policy.act(np.zeros((horizon, mdp.n)), pol_rng), dtype=np.int64)
        step, acts = mdp.step, mdp.actions
        cur = x[None, :]
        for t in range(horizon):
            cur = np.asarray(step(cur, acts[actions[t]][None, :], dyn_rng), dtype=float).reshape(1, mdp.n)
            path[t + 1] = cur[0]
    else:
        actions = np.empty(horizon, dtype=np.int64)
        cur = x[None, :]
        for t in range(horizon):
            u = policy.act(cur, pol_rng)
            actions[t] = u[0]
            cur = mdp.sample_next(cur, u, dyn_rng)
            path[t + 1] = cur[0]
    costs = mdp.stage_cost(path[:-1], actions)
    return Trajectory(path, actions, costs, seed, {"policy": policy.policy_id})


@dataclass
class DriftReport:
    probes: np.ndarray
    margins: np.ndarray          # (P, A): E^[V(X')] - ((1 - alpha) V(x) + b)
    std_errors: np.ndarray       # (P, A)
    flagged: np.ndarray          # (P, A) bool, margin > 3 SE

    @property
    def max_violation(self) -> float:
        return float(self.margins.max())

    @property
    def num_flagged(self) -> int:
        return int(self.flagged.sum())

    @property
    def passed(self) -> bool:
        return self.num_flagged == 0


def verify_drift(mdp: ContinuousMdp, cert: LyapunovCertificate, probe_states,
                 samples_per_probe: int, seed: int) -> DriftReport:
    """Monte Carlo check of the drift inequality at each probe and action."""
    probes = [as_state(p, mdp.n) for p in probe_states]
    if not probes:
        raise InputError("probe list is empty")
    if samples_per_probe < 100:
        raise InputError("samples_per_probe must be >= 100")
    P, A = len(probes), mdp.num_actions
    margins = np.empty((P, A))
    ses = np.empty((P, A))
    for i, x in enumerate(probes):
        rhs = (1.0 - cert.alpha) * cert.V(x) + cert.b
        for a in range(A):
            rng = stream(seed, "drift", i, a)
            xs = np.repeat(x[None, :], samples_per_probe, axis=0)
            nxt = mdp.sample_next(xs, np.full(samples_per_probe, a), rng)
            v = cert.V(nxt)
            margins[i, a] = v.mean() - rhs
            ses[i, a] = v.std(ddof=1) / np.sqrt(samples_per_probe)
    return DriftReport(np.array(probes), margins, ses, margins > 3.0 * ses)
