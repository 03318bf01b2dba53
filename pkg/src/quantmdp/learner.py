"""Quantized Q-learning, empirical model learning and policy evaluation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, InputError
from .finite_model import FiniteMdp
from .mdp import ContinuousMdp, StationaryPolicy, TablePolicy, Trajectory, as_state, simulate
from .quantizer import GridQuantizer
from .rng import stream


@dataclass
class QLearningResult:
    q: np.ndarray                 # (M+1, A) Q-table
    counts: np.ndarray            # (M+1, A) visit counts
    trajectory: Trajectory
    snapshots: dict = field(default_factory=dict)
    rates: Optional[np.ndarray] = None

    def __iter__(self):
        return iter((self.q, self.counts, self.trajectory))


def q_learning_pass(bins: np.ndarray, actions: np.ndarray, costs: np.ndarray, num_bins: int,
                    num_actions: int, beta: float, q0=None, checkpoints=(),
                    record_rates: bool = False):
    """Run the tabular update over a recorded quantized trajectory.

    ``bins`` has length T + 1 (the last entry is the final successor).  The
    j-th update of a pair uses learning rate 1/j.
    """
    T = len(actions)
    A = num_actions
    q = [0.0] * (num_bins * A) if q0 is None else [float(v) for v in np.ravel(q0)]
    n = [0] * (num_bins * A)
    ys = bins.tolist()
    us = actions.tolist()
    cs = costs.tolist()
    marks = set(int(c) for c in checkpoints)
    snaps = {}
    rates = [0.0] * T if record_rates else None
    for t in range(T):
        y, u = ys[t], us[t]
        j = y * A + u
        n[j] += 1
        rate = 1.0 / n[j]
        base = ys[t + 1] * A
        target = cs[t] + beta * min(q[base:base + A])
        q[j] += rate * (target - q[j])
        if record_rates:
            rates[t] = rate
        if t + 1 in marks:
            snaps[t + 1] = np.array(q).reshape(num_bins, A)
    q_arr = np.array(q).reshape(num_bins, A)
    counts = np.array(n, dtype=np.int64).reshape(num_bins, A)
    return q_arr, counts, snaps, (np.array(rates) if record_rates else None)


def quantized_q_learning(mdp: ContinuousMdp, qz: GridQuantizer, exploration: StationaryPolicy,
                         iterations: int, x0, seed: int, beta: Optional[float] = None,
                         q0=None, checkpoints=(), record_rates: bool = False) -> QLearningResult:
    """Q-learning on quantized observations along one exploratory trajectory.

    The exploration policy does not depend on the Q-table, so the trajectory
    is simulated first and the updates are replayed over it; the result is
    identical to interleaving the two.  Costs are evaluated at the true
    state.  ``checkpoints`` lists iteration counts at which Q is snapshotted.
    """
    if iterations < 1:
        raise InputError("iterations must be >= 1")
    beta = mdp.beta if beta is None else beta
    traj = simulate(mdp, exploration, x0, iterations, seed)
    bins = qz.quantize_batch(traj.path)
    q, counts, snaps, rates = q_learning_pass(
        bins, traj.actions, traj.costs, qz.num_bins, mdp.num_actions, beta,
        q0=q0, checkpoints=checkpoints, record_rates=record_rates)
    return QLearningResult(q, counts, traj, snaps, rates)


@dataclass
class CoverageReport:
    visits: np.ndarray            # (M+1, A)
    unvisited: list               # [(bin, action), ...] given the fallback

    @property
    def complete(self) -> bool:
        return not self.unvisited


def empirical_model(traj: Trajectory, qz: GridQuantizer, c_sup: float,
                    num_actions: Optional[int] = None):
    """Visit-count ratio estimates of the effective cost and kernel.

    Unvisited pairs get cost ``c_sup`` and a self-loop and are listed in the
    coverage report.
    """
    if len(traj) == 0:
        raise InputError("trajectory is empty")
    S = qz.num_bins
    A = int(traj.actions.max()) + 1 if num_actions is None else num_actions
    y = qz.quantize_batch(traj.path)
    pair = y[:-1] * A + traj.actions
    visits = np.bincount(pair, minlength=S * A).astype(np.int64)
    cost_sum = np.bincount(pair, weights=traj.costs, minlength=S * A)
    trans = np.bincount(pair * S + y[1:], minlength=S * A * S).reshape(S, A, S).astype(float)
    visits = visits.reshape(S, A)
    cost = np.full((S, A), float(c_sup))
    seen = visits > 0
    cost[seen] = cost_sum.reshape(S, A)[seen] / visits[seen]
    P = np.zeros((S, A, S))
    P[seen] = trans[seen] / visits[seen][:, None]
    unvisited = [(int(i), int(a)) for i, a in zip(*np.nonzero(~seen))]
    for i, a in unvisited:
        P[i, a, i] = 1.0
    return FiniteMdp(np.clip(cost, 0.0, c_sup), P, c_sup), CoverageReport(visits, unvisited)


def q_from_model(fmdp: FiniteMdp, beta: float, tol: float = 1e-8,
                 max_iter: int = 100_000) -> np.ndarray:
    """Fixed point of Q = C + beta P min_v Q, to sup-norm accuracy ``tol``."""
    if not 0 < beta < 1:
        raise InputError("beta must lie in (0, 1)")
    stop = tol * (1.0 - beta) / (2.0 * beta)
    q = np.zeros_like(fmdp.cost)
    for _ in range(max_iter):
        q_new = fmdp.cost + beta * (fmdp.P @ q.min(axis=1))
        res = float(np.abs(q_new - q).max())
        q = q_new
        if res <= stop:
            return q
    raise ConvergenceError(f"Q iteration did not converge in {max_iter} iterations",
                           residual=res, iterations=max_iter)


def greedy_policy(q, qz: GridQuantizer) -> TablePolicy:
    """x -> argmin_u Q(q(x), u), ties to the lowest action index."""
    q = np.asarray(q, dtype=float)
    return TablePolicy(qz, np.argmin(q, axis=1), policy_id="greedy")


@dataclass
class PolicyEvaluation:
    mean: float
    std_error: float
    truncation_bias: float

    def __iter__(self):
        return iter((self.mean, self.std_error))


def evaluate_policy(mdp: ContinuousMdp, policy: StationaryPolicy, beta: float, x0,
                    rollouts: int, horizon: int, seed: int) -> PolicyEvaluation:
    """Monte Carlo estimate of the discounted cost of ``policy`` from ``x0``.

    Each rollout is truncated at ``horizon``; the neglected tail is at most
    beta^horizon c_sup / (1 - beta), reported as ``truncation_bias``.
    """
    if rollouts < 1 or horizon < 1:
        raise InputError("rollouts and horizon must be >= 1")
    x = np.repeat(as_state(x0, mdp.n)[None, :], rollouts, axis=0)
    dyn, pol = stream(seed, "eval-dynamics"), stream(seed, "eval-policy")
    total = np.zeros(rollouts)
    disc = 1.0
    for _ in range(horizon):
        u = policy.act(x, pol)
        total += disc * mdp.stage_cost(x, u)
        x = mdp.sample_next(x, u, dyn)
        disc *= beta
    se = float(total.std(ddof=1) / np.sqrt(rollouts)) if rollouts > 1 else 0.0
    return PolicyEvaluation(float(total.mean()), se, beta ** horizon * mdp.c_sup / (1 - beta))


def save_qtable(path, q, qz: GridQuantizer, beta: float, meta: Optional[dict] = None) -> None:
    rec = {"quantizer": qz.to_record(), "beta": beta, "q": np.asarray(q).tolist(),
           "meta": meta or {}}
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=1)


def load_qtable(path):
    with open(path) as fh:
        rec = json.load(fh)
    return np.array(rec["q"]), GridQuantizer.from_record(rec["quantizer"]), rec["beta"]
