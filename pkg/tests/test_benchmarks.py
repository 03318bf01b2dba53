import numpy as np
import pytest
from scipy import stats

from quantmdp.benchmarks import (BENCHMARKS, UniformLaw, absorbing_zero, constant_cost,
                                 gaussian_shift_tv, gaussian_tv_lipschitz, l1_induced_norm,
                                 linear_gaussian_1d, linear_gaussian_2d,
                                 linear_gaussian_minorized, make_benchmark, numerical_tv_1d,
                                 reference_solution)
from quantmdp.errors import InputError, OracleUnstableError
from quantmdp.finite_model import build_finite_model, check_dominance, quantize_measure
from quantmdp.mdp import Box, OutsideBox
from quantmdp.quantizer import DiracAtRepresentative, build_uniform


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_every_benchmark_certificate_passes_drift(name):
    bm = make_benchmark(name)
    rep = bm.spec.verify(bm.mdp, samples_per_probe=20_000, seed=0)
    assert rep.passed, name
    assert bm.spec.derivations["lyapunov"]


def test_default_certificates():
    _, spec = linear_gaussian_1d()
    assert (spec.lyapunov.alpha, spec.lyapunov.b) == pytest.approx((0.5, 3.0))
    _, spec = linear_gaussian_1d(action_grid=[0.0])
    assert (spec.lyapunov.alpha, spec.lyapunov.b) == pytest.approx((0.5, 1.0))
    _, spec = linear_gaussian_minorized()
    assert spec.lyapunov.alpha == pytest.approx(0.55)
    assert spec.lyapunov.b == pytest.approx(0.9 * 3 + 0.1 / 3)
    _, spec = linear_gaussian_2d()
    assert (spec.lyapunov.alpha, spec.lyapunov.b) == pytest.approx((0.5, 32.0))


def test_tv_constant_against_numerical_oracle():
    a, sigma = 0.5, 1.0
    mdp, _ = linear_gaussian_1d(a, sigma)
    rng = np.random.default_rng(0)
    for x, y in rng.uniform(-5, 5, size=(20, 2)):
        num = numerical_tv_1d(stats.norm(a * x, sigma).pdf, stats.norm(a * y, sigma).pdf,
                              -15, 15)
        assert gaussian_shift_tv(a * (x - y), sigma) == pytest.approx(num, abs=1e-6)
        assert num <= mdp.alpha_T * abs(x - y) + 1e-6
    assert mdp.alpha_T == pytest.approx(2 * a / (sigma * np.sqrt(2 * np.pi)))
    assert gaussian_tv_lipschitz(0.0, 1.0) == 0.0


def test_minorized_mixture_and_alpha_T():
    mdp, spec = linear_gaussian_minorized(lam=0.1)
    mu = spec.minorization
    assert mu.mass == 0.1
    assert mu.mu_bin_mass(Box(np.array([0.0]), np.array([1.0]))) == pytest.approx(0.05)
    assert mu.mu_bin_mass(OutsideBox(np.array([-0.5]), np.array([0.5]))) == pytest.approx(0.05)
    base, _ = linear_gaussian_1d()
    assert mdp.alpha_T == pytest.approx(0.9 * base.alpha_T)
    with pytest.raises(InputError):
        linear_gaussian_minorized(lam=0.0)
    with pytest.raises(InputError):
        linear_gaussian_minorized(lam=1.5)


def test_minorized_lambda_one_is_iid():
    mdp, _ = linear_gaussian_minorized(lam=1.0)
    rng = np.random.default_rng(1)
    x = np.full((50_000, 1), 7.0)
    nxt = mdp.sample_next(x, np.zeros(50_000, dtype=int), rng)[:, 0]
    assert nxt.min() >= -1.0 and nxt.max() < 1.0
    assert stats.kstest(nxt, stats.uniform(-1, 2).cdf).pvalue > 1e-3


def test_2d_reduction_and_degenerate_case():
    mdp, _ = linear_gaussian_2d()
    rng = np.random.default_rng(2)
    x = np.tile([[2.0, -4.0]], (100_000, 1))
    u = np.full(100_000, 2)  # payload +1
    nxt = mdp.sample_next(x, u, rng)
    # each coordinate follows the one-dimensional model 0.5 x + u + W
    assert nxt.mean(axis=0) == pytest.approx([2.0, -1.0], abs=0.02)
    assert nxt.var(axis=0) == pytest.approx([1.0, 1.0], abs=0.02)
    det, spec = linear_gaussian_2d(A=np.zeros((2, 2)), sigma=0.0)
    assert det.alpha_T == 0.0
    assert det.sample_next(x[:3], u[:3], rng).tolist() == [[1.0, 1.0]] * 3
    assert spec.lyapunov.alpha == 1.0
    assert l1_induced_norm([[0.5, -0.6], [0.1, 0.2]]) == pytest.approx(0.8)


def test_invalid_parameters():
    with pytest.raises(InputError):
        linear_gaussian_1d(a=1.0)
    with pytest.raises(InputError):
        linear_gaussian_1d(a=-1.2)
    with pytest.raises(InputError):
        linear_gaussian_2d(A=[[0.6, 0.0], [0.5, 0.1]])
    with pytest.raises(InputError):
        make_benchmark("nope")


def test_uniform_law_moments():
    law = UniformLaw()
    assert law.abs_moment(2) == pytest.approx(1 / 3)
    assert law.box_mass(-5, 5) == 1.0 and law.box_mass(0.5, 2) == pytest.approx(0.25)


def test_reference_on_toys():
    az = absorbing_zero(0.9)
    ref = reference_solution(az.mdp, "discounted", 16, 4.0, 20, seed=0, occupation_samples=2000)
    assert ref.probe_values[(0.0,)] == pytest.approx(0.0, abs=1e-8)
    cc = constant_cost(0.5, 0.8)
    ref = reference_solution(cc.mdp, "discounted", 8, 2.0, 20, seed=0, occupation_samples=2000)
    assert ref.probe_values[(0.0,)] == pytest.approx(0.5 / 0.2, abs=1e-7)
    assert ref.coarse_gap <= 1e-7


def test_reference_instability_and_guards():
    mdp, _ = linear_gaussian_1d()
    with pytest.raises(OracleUnstableError):
        reference_solution(mdp, "discounted", 8, 6.0, 50, seed=0, occupation_samples=2000,
                           tolerance=1e-9)
    with pytest.raises(InputError):
        reference_solution(mdp, "discounted", 64, 20.0, 50, seed=0, max_k_under_test=16)
    with pytest.raises(InputError):
        reference_solution(mdp, "discounted", 256, 4.0, 50, seed=0, max_half_width_under_test=4)
    with pytest.raises(InputError):
        reference_solution(mdp, "average", 256, 20.0, 50, seed=0)


@pytest.mark.parametrize("k", [4, 16, 64])
def test_minorized_finite_models_dominate_mu_hat(k):
    mdp, spec = linear_gaussian_minorized()
    qz = build_uniform(1, k, 8.0)
    f = build_finite_model(mdp, qz, DiracAtRepresentative(), 100, seed=k,
                           minorization=spec.minorization)
    mu = quantize_measure(spec.minorization, qz)
    assert mu.sum() == pytest.approx(0.1)
    assert check_dominance(f, mu) is f or np.all(f.P >= mu - 1e-12)
