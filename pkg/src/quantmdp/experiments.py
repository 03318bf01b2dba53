"""Experiment runners behind the command-line driver.

Each runner takes a validated :class:`ExperimentConfig` and returns a list
of :class:`Table` objects (rows of plain floats/ints/strings) plus metadata;
writing files is left to the caller.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import (bound_average_occupation, bound_discounted_occupation, bound_learning,
                       bound_lyapunov_average, bound_lyapunov_discounted, discounted_occupation,
                       expected_loss, invariant_occupation, median_optimality_check,
                       overflow_mass_check, rate_fit)
from .benchmarks import Benchmark, make_benchmark, reference_solution
from .errors import ConfigError, InputError
from .finite_model import build_finite_model, discounted_vi, quantize_measure, relative_vi
from .learner import empirical_model, q_from_model, quantized_q_learning
from .mdp import TablePolicy, UniformPolicy, default_policy_set, verify_drift
from .quantizer import (DiracAtRepresentative, Empirical, build_uniform, make_weighting,
                        set_median_representatives, size_for_average, size_for_discounted)


@dataclass
class Table:
    name: str
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name):
        j = self.columns.index(name)
        return [r[j] for r in self.rows]


# ---------------------------------------------------------------- shared steps

def load_benchmark(cfg) -> Benchmark:
    try:
        return make_benchmark(cfg.benchmark.name, **cfg.benchmark.params)
    except (InputError, TypeError) as err:
        raise ConfigError(f"benchmark: {err}") from None


def initial_state(cfg, bm: Benchmark) -> np.ndarray:
    x0 = bm.spec.initial_states[0] if cfg.x0 is None else cfg.x0
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (bm.mdp.n,):
        raise ConfigError(f"x0: expected {bm.mdp.n} coordinates, got {x0.size}")
    return x0


def _require_minorization(cfg, bm):
    if cfg.criterion == "average" and bm.spec.minorization is None:
        raise ConfigError(f"criterion: benchmark {bm.spec.name!r} has no minorization certificate")


def sized_half_width(cfg, bm: Benchmark, k: int, x0):
    """Half-width for ``k`` bins per axis and the moment constant used (None if explicit)."""
    q = cfg.quantizer
    if q.mode == "explicit":
        return float(q.half_width), None
    cert = bm.spec.lyapunov
    if cfg.criterion == "discounted":
        return size_for_discounted(cert, k, bm.mdp.beta, x0)
    avg = cert.average_form()
    return size_for_average(avg, k), avg.b


def occupation(cfg, bm: Benchmark, policy, seed: int):
    mdp = bm.mdp
    if cfg.criterion == "discounted":
        return discounted_occupation(mdp, policy, mdp.beta, initial_state(cfg, bm),
                                     cfg.samples.occupation, seed)
    return invariant_occupation(mdp, policy, cfg.samples.occupation, seed,
                                burn_in=cfg.samples.burn_in)


def design_quantizer(cfg, bm: Benchmark, k: int, samples=None):
    x0 = initial_state(cfg, bm)
    hw, C = sized_half_width(cfg, bm, k, x0)
    qz = build_uniform(bm.mdp.n, k, hw)
    if cfg.quantizer.representatives == "median":
        if samples is None:
            raise InputError("median representatives need an occupation sample")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            qz = set_median_representatives(qz, samples)
    return qz, C


def exploration_sample(cfg, bm: Benchmark, seed: int):
    """Invariant sample of the uniform exploration policy (the learning routes' weighting)."""
    mdp = bm.mdp
    return invariant_occupation(mdp, UniformPolicy(mdp.num_actions), cfg.samples.occupation,
                                seed, burn_in=cfg.samples.burn_in)


def bin_weighting(cfg, bm: Benchmark, qz, seed: int):
    """Weighting named in the config; ``empirical`` uses the exploration invariant measure."""
    if cfg.quantizer.weighting == "empirical":
        pi = exploration_sample(cfg, bm, seed)
        return Empirical.from_samples(qz, pi, fallback=DiracAtRepresentative())
    return make_weighting(cfg.quantizer.weighting, qz)


def solve_model(cfg, bm: Benchmark, qz, weighting, seed: int):
    mdp = bm.mdp
    minor = bm.spec.minorization if cfg.criterion == "average" else None
    fm = build_finite_model(mdp, qz, weighting, cfg.samples.samples_per_bin, seed,
                            minorization=minor)
    if cfg.criterion == "discounted":
        return fm, discounted_vi(fm, mdp.beta)
    return fm, relative_vi(fm, quantize_measure(bm.spec.minorization, qz))


def headline(cfg, qz, sol, x0) -> float:
    """Value at x0 (discounted) or the gain (average)."""
    if cfg.criterion == "average":
        return float(sol.gain)
    return float(sol.values[qz.quantize(x0)])


def oracle(cfg, bm: Benchmark, max_k: int, max_hw: float, jobs: int = 1):
    r = cfg.reference
    hw_ref = r.half_width_ref if r.half_width_ref is not None else 2.0 * max_hw
    x0 = initial_state(cfg, bm)
    ref = reference_solution(
        bm.mdp, cfg.criterion, r.k_ref, hw_ref, r.samples_per_bin, cfg.seed,
        probe_states=[x0], minorization=bm.spec.minorization, occupation_samples=r.occupation,
        tolerance=r.tolerance, max_k_under_test=max_k, max_half_width_under_test=max_hw,
        jobs=jobs)
    j_ref = ref.gain if cfg.criterion == "average" else ref.probe_values[tuple(map(float, x0))]
    return ref, float(j_ref)


# ---------------------------------------------------------------- design

def run_design(cfg, jobs: int = 1):
    bm = load_benchmark(cfg)
    _require_minorization(cfg, bm)
    k = cfg.quantizer.k
    hw, C = sized_half_width(cfg, bm, k, initial_state(cfg, bm))
    qz = build_uniform(bm.mdp.n, k, hw)
    row = [bm.mdp.n, k, qz.num_granular, hw, cfg.quantizer.mode, cfg.criterion,
           math.nan if C is None else float(C)]
    t = Table("design", ["n", "k", "M", "half_width", "mode", "criterion", "moment_constant"],
              [row], {"quantizer": qz.to_record()})
    return [t]


# ---------------------------------------------------------------- solve

def run_solve(cfg, jobs: int = 1):
    bm = load_benchmark(cfg)
    _require_minorization(cfg, bm)
    x0 = initial_state(cfg, bm)
    samples = None
    if cfg.quantizer.representatives == "median":
        samples = occupation(cfg, bm, UniformPolicy(bm.mdp.num_actions), cfg.seed + 1)
    qz, _ = design_quantizer(cfg, bm, cfg.quantizer.k, samples)
    fm, sol = solve_model(cfg, bm, qz, bin_weighting(cfg, bm, qz, cfg.seed + 3), cfg.seed)
    cols = ["bin"] + [f"rep_{d}" for d in range(qz.n)] + ["value", "action"]
    rows = [[i, *map(float, qz.representatives[i]), float(sol.values[i]), int(sol.policy[i])]
            for i in range(qz.num_bins)]
    meta = {"criterion": cfg.criterion, "headline": headline(cfg, qz, sol, x0),
            "x0": x0.tolist(), "iterations": sol.iterations, "residual": sol.residual,
            "gain": sol.gain, "quantizer": qz.to_record()}
    summary = Table("solve_summary", ["criterion", "x0", "value"],
                    [[cfg.criterion, " ".join(repr(float(v)) for v in x0), meta["headline"]]])
    return [Table("solve", cols, rows, meta), summary]


# ---------------------------------------------------------------- learn

def weighted_model_q(cfg, bm: Benchmark, qz, seed: int):
    """Q-values of the finite model weighted by the exploration policy's invariant measure."""
    mdp = bm.mdp
    inv = invariant_occupation(mdp, UniformPolicy(mdp.num_actions), cfg.learning.model_occupation,
                               seed, burn_in=cfg.samples.burn_in)
    w = Empirical.from_samples(qz, inv, fallback=DiracAtRepresentative())
    fm = build_finite_model(mdp, qz, w, cfg.learning.model_samples_per_bin, seed)
    return q_from_model(fm, mdp.beta), w.missing(qz)


def run_learn(cfg, jobs: int = 1):
    bm = load_benchmark(cfg)
    if cfg.criterion != "discounted":
        raise ConfigError("criterion: learning runs use the discounted criterion")
    mdp = bm.mdp
    x0 = initial_state(cfg, bm)
    L = cfg.learning
    qz, _ = design_quantizer(cfg, bm, cfg.quantizer.k)
    lengths = sorted(set(L.lengths) | {L.iterations})
    res = quantized_q_learning(mdp, qz, UniformPolicy(mdp.num_actions), L.iterations, x0,
                               cfg.seed, checkpoints=lengths)
    q_pi, missing = weighted_model_q(cfg, bm, qz, cfg.seed + 1)
    rows = []
    for n_steps in lengths:
        q_learned = res.snapshots.get(n_steps, res.q)
        fe, cov = empirical_model(res.trajectory.prefix(n_steps), qz, mdp.c_sup, mdp.num_actions)
        q_emp = q_from_model(fe, mdp.beta)
        # unvisited pairs carry no information for either learning route
        seen = cov.visits > 0
        rows.append([n_steps,
                     float(np.abs(q_learned - q_emp)[seen].max()),
                     float(np.abs(q_learned - q_pi)[seen].max()),
                     float(np.abs(q_emp - q_pi)[seen].max()),
                     len(cov.unvisited)])
    cols = ["length", "gap_qlearning_vs_empirical", "gap_qlearning_vs_weighted",
            "gap_empirical_vs_weighted", "unvisited_pairs"]
    meta = {"q": res.q.tolist(), "beta": mdp.beta, "quantizer": qz.to_record(),
            "bins_without_invariant_samples": missing,
            "threshold": 0.05 * mdp.c_sup / (1 - mdp.beta)}
    return [Table("learn", cols, rows, meta)]


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ["k", "M", "half_width", "seed", "expected_loss", "expected_loss_se", "bound",
                 "bound_occupation", "j_hat", "j_ref", "abs_err", "abs_err_se", "overflow_mass",
                 "overflow_se", "overflow_cap", "overflow_ok"]
FIT_COLUMNS = ["quantity", "slope", "intercept", "rms_residual", "num_points", "theory_slope"]


def _theory_slope(n, m):
    return -(1.0 / n) * (1.0 - 1.0 / m)


def _fit_rows(n, m, by_k, quantities):
    rows = []
    for q in quantities:
        pts = [(M, v) for M, v in by_k[q]]
        try:
            slope, icpt, rms = rate_fit(pts)
        except InputError:
            slope = icpt = rms = math.nan
        rows.append([q, slope, icpt, rms, len(pts), _theory_slope(n, m)])
    return rows


def _synthetic_sweep(cfg, bm):
    s = cfg.sweep.synthetic
    n = bm.mdp.n
    rows = []
    for k in sorted(cfg.sweep.ks):
        for seed in sorted(cfg.sweep.seeds):
            M = k ** n
            v = s.scale * M ** s.exponent
            rows.append([k, M, math.nan, seed, v, 0.0] + [math.nan] * 10)
    by_k = {"expected_loss": [(r[1], r[4]) for r in rows if r[3] == min(cfg.sweep.seeds)]}
    fit = _fit_rows(n, bm.spec.lyapunov.m, by_k, ["expected_loss"])
    return [Table("sweep", SWEEP_COLUMNS, rows), Table("sweep_fit", FIT_COLUMNS, fit)]


def _policy_losses(bm, qz, samples_by_policy, weighting_for):
    out = []
    for pid, s in samples_by_policy:
        est, se = expected_loss(s, qz, weighting_for(s))
        out.append((pid, est, se))
    return out


def run_sweep(cfg, jobs: int = 1):
    bm = load_benchmark(cfg)
    _require_minorization(cfg, bm)
    if cfg.sweep.synthetic is not None:
        return _synthetic_sweep(cfg, bm)
    mdp, spec = bm.mdp, bm.spec
    x0 = initial_state(cfg, bm)
    ks, seeds = sorted(cfg.sweep.ks), sorted(cfg.sweep.seeds)
    widths = {k: sized_half_width(cfg, bm, k, x0) for k in ks}
    ref, j_ref = oracle(cfg, bm, max(ks), max(w for w, _ in widths.values()), jobs)

    policies = default_policy_set(mdp.num_actions)
    samples = {}
    for seed in seeds:
        samples[seed] = [(p.policy_id, occupation(cfg, bm, p, seed * 1000 + 7 + j))
                         for j, p in enumerate(policies)]

    cert = spec.lyapunov
    n, m = mdp.n, cert.m

    def point(job):
        k, seed = job
        pool = samples[seed]
        explore = dict(pool)["uniform"]
        qz, _ = design_quantizer(cfg, bm, k, explore)
        weighting = bin_weighting(cfg, bm, qz, seed * 1000 + 3)
        fm, sol = solve_model(cfg, bm, qz, weighting, seed)
        j_hat = headline(cfg, qz, sol, x0)
        greedy = TablePolicy(qz, sol.policy, policy_id="greedy")
        pool = pool + [("greedy", occupation(cfg, bm, greedy, seed * 1000 + 7 + len(policies)))]
        losses = _policy_losses(bm, qz, pool, lambda s: weighting)
        worst = max(losses, key=lambda t: t[1])
        M = qz.num_granular
        if cfg.criterion == "discounted":
            lyap = bound_lyapunov_discounted(cert, M, n, mdp.beta, x0, mdp.alpha_c, mdp.alpha_T,
                                             mdp.c_sup)
            occ = bound_discounted_occupation(mdp.alpha_c, mdp.alpha_T, mdp.c_sup, mdp.beta,
                                              [(p, v) for p, v, _ in losses])
        else:
            lam = spec.minorization.mass
            lyap = bound_lyapunov_average(cert.average_form(), M, n, lam, mdp.alpha_c,
                                          mdp.alpha_T, mdp.c_sup)
            occ = bound_average_occupation(mdp.alpha_c, mdp.alpha_T, mdp.c_sup, lam,
                                           [(p, v) for p, v, _ in losses])
        bound = lyap.total if cfg.quantizer.mode == "lyapunov" else math.nan
        over = [overflow_mass_check(s, qz, cert, k) for _, s in pool]
        ow = max(over, key=lambda r: r.mass)
        return [k, M, qz.half_width, seed, worst[1], worst[2], bound, occ.total, j_hat, j_ref,
                abs(j_hat - j_ref), 0.0, ow.mass, ow.std_error, ow.cap, bool(ow.passed)]

    jobs_list = [(k, s) for k in ks for s in seeds]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(point, jobs_list))
    else:
        rows = [point(j) for j in jobs_list]
    rows.sort(key=lambda r: (r[0], r[3]))

    # spread of j_hat across seeds at each k stands in for its standard error
    by_k = {}
    for r in rows:
        by_k.setdefault(r[0], []).append(r)
    for k, rs in by_k.items():
        if len(rs) > 1:
            se = float(np.std([r[8] for r in rs], ddof=1) / math.sqrt(len(rs)))
            for r in rs:
                r[11] = se
    means = {"expected_loss": [], "abs_err": []}
    for k, rs in sorted(by_k.items()):
        means["expected_loss"].append((rs[0][1], float(np.mean([r[4] for r in rs]))))
        means["abs_err"].append((rs[0][1], float(np.mean([r[10] for r in rs]))))
    fit = _fit_rows(n, m, means, ["expected_loss", "abs_err"])
    meta = {"j_ref": j_ref, "oracle_gap": ref.coarse_gap, "oracle_tolerance": ref.tolerance,
            "k_ref": cfg.reference.k_ref, "half_width_ref": ref.quantizer.half_width,
            "certificate": {"m": cert.m, "alpha": cert.alpha, "b": cert.b,
                            "derivation": cert.derivation}}
    return [Table("sweep", SWEEP_COLUMNS, rows, meta), Table("sweep_fit", FIT_COLUMNS, fit)]


# ---------------------------------------------------------------- compare

COMPARE_COLUMNS = ["route", "k", "M", "half_width", "value_x0", "j_ref", "gap", "bound",
                   "bound_formula", "bound_ratio"]


def run_compare(cfg, jobs: int = 1):
    bm = load_benchmark(cfg)
    if cfg.criterion != "discounted":
        raise ConfigError("criterion: compare uses the discounted criterion")
    mdp, spec = bm.mdp, bm.spec
    x0 = initial_state(cfg, bm)
    k = cfg.quantizer.k
    hw, _ = sized_half_width(cfg, bm, k, x0)
    ref, j_ref = oracle(cfg, bm, k, hw, jobs)

    explore = occupation(cfg, bm, UniformPolicy(mdp.num_actions), cfg.seed + 1)
    qz_plan, _ = design_quantizer(cfg, bm, k, explore)
    _, sol = solve_model(cfg, bm, qz_plan, bin_weighting(cfg, bm, qz_plan, cfg.seed + 3),
                         cfg.seed)
    v_plan = headline(cfg, qz_plan, sol, x0)

    # the learning route sees only the exploration trajectory
    qz_learn = build_uniform(mdp.n, k, hw)
    res = quantized_q_learning(mdp, qz_learn, UniformPolicy(mdp.num_actions),
                               cfg.learning.iterations, x0, cfg.seed + 2)
    fe, _ = empirical_model(res.trajectory, qz_learn, mdp.c_sup, mdp.num_actions)
    q_emp = q_from_model(fe, mdp.beta)
    v_learn = float(q_emp[qz_learn.quantize(x0)].min())

    M = qz_plan.num_granular
    args = (spec.lyapunov, M, mdp.n, mdp.beta, x0, mdp.alpha_c, mdp.alpha_T, mdp.c_sup)
    b_plan, b_learn = bound_lyapunov_discounted(*args), bound_learning(*args)
    rows = [
        ["planning", k, M, hw, v_plan, j_ref, abs(v_plan - j_ref), b_plan.total,
         b_plan.formula_id, 1.0],
        ["learning", k, M, hw, v_learn, j_ref, abs(v_learn - j_ref), b_learn.total,
         b_learn.formula_id, b_learn.total / b_plan.total],
    ]
    meta = {"moment_constant": b_plan.details["C"], "qlearning_value_x0":
            float(res.q[qz_learn.quantize(x0)].min()), "oracle_gap": ref.coarse_gap}
    return [Table("compare", COMPARE_COLUMNS, rows, meta)]


# ---------------------------------------------------------------- verify

VERIFY_COLUMNS = ["check", "item", "value", "threshold", "passed"]


def run_verify(cfg, jobs: int = 1):
    bm = load_benchmark(cfg)
    _require_minorization(cfg, bm)
    mdp, spec = bm.mdp, bm.spec
    rows = []
    drift = verify_drift(mdp, spec.lyapunov, spec.probe_states, 20_000, cfg.seed)
    for i, p in enumerate(drift.probes):
        for a in range(mdp.num_actions):
            rows.append(["drift", f"x={' '.join(repr(float(v)) for v in p)};u={a}",
                         float(drift.margins[i, a]), float(3 * drift.std_errors[i, a]),
                         not bool(drift.flagged[i, a])])
    k = cfg.quantizer.k
    qz, _ = design_quantizer(cfg.model_copy(update={"quantizer": cfg.quantizer.model_copy(
        update={"representatives": "midpoint"})}), bm, k)
    explore = None
    for j, p in enumerate(default_policy_set(mdp.num_actions)):
        s = occupation(cfg, bm, p, cfg.seed * 1000 + 7 + j)
        if p.policy_id == "uniform":
            explore = s
        r = overflow_mass_check(s, qz, spec.lyapunov, k)
        rows.append(["overflow", p.policy_id, r.mass, r.cap + 3 * r.std_error, bool(r.passed)])
    # median optimality on the most populated bins of the exploration sample
    bins = qz.quantize_batch(explore.states)
    counts = np.bincount(bins, minlength=qz.num_bins)[: qz.num_granular]
    for i in np.argsort(-counts, kind="stable")[:5]:
        sel = bins == i
        if sel.sum() < 2:
            continue
        rep = median_optimality_check(explore.states[sel], explore.weights[sel])
        rows.append(["median", f"bin={int(i)}", rep.gap, 1e-6, bool(rep.gap <= 1e-6)])
    return [Table("verify", VERIFY_COLUMNS, rows, {"all_passed": all(r[4] for r in rows)})]


RUNNERS = {
    "design": run_design,
    "solve": run_solve,
    "learn": run_learn,
    "sweep": run_sweep,
    "compare": run_compare,
    "verify": run_verify,
}
