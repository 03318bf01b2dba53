import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantmdp.benchmarks import linear_gaussian_1d
from quantmdp.errors import InputError
from quantmdp.mdp import (ConstantPolicy, ContinuousMdp, FunctionPolicy, LyapunovCertificate,
                          MinorizationCertificate, UniformPolicy, as_batch, as_state,
                          default_policy_set, simulate, verify_drift)


def absorbing(n=1, beta=0.9):
    return ContinuousMdp(n, [[0.0]], lambda x, u, rng: np.zeros_like(x),
                         lambda x, u: np.minimum(np.abs(x).sum(axis=1), 1.0), 1.0, 1.0, 0.0, beta)


def test_as_state_and_batch_shapes():
    assert as_state(2.0, 1).shape == (1,)
    assert as_batch([1.0, 2.0], 1).shape == (2, 1)
    assert as_batch([1.0, 2.0], 2).shape == (1, 2)
    with pytest.raises(InputError):
        as_state([1.0, 2.0], 1)


@pytest.mark.parametrize("kwargs", [dict(n=0), dict(beta=1.0), dict(beta=0.0), dict(c_sup=0.0),
                                    dict(actions=[]), dict(alpha_T=-1.0)])
def test_mdp_validation(kwargs):
    base = dict(n=1, actions=[[0.0]], step=lambda x, u, r: x, cost=lambda x, u: x[:, 0] * 0,
                c_sup=1.0, alpha_c=0.0, alpha_T=0.0, beta=0.9)
    base.update(kwargs)
    with pytest.raises(InputError):
        ContinuousMdp(**base)


def test_stage_cost_out_of_range_rejected():
    mdp = ContinuousMdp(1, [[0.0]], lambda x, u, r: x, lambda x, u: np.full(x.shape[0], 2.0),
                        1.0, 0.0, 0.0, 0.9)
    with pytest.raises(InputError):
        mdp.stage_cost(np.zeros((3, 1)), np.zeros(3, dtype=int))


def test_simulate_absorbing_example():
    tr = simulate(absorbing(), ConstantPolicy(0, 1), [1.0], 3, seed=0)
    assert tr.states[:, 0].tolist() == [1.0, 0.0, 0.0]
    assert tr.next_states[:, 0].tolist() == [0.0, 0.0, 0.0]
    assert len(tr) == 3


def test_simulate_determinism_and_chaining():
    mdp, _ = linear_gaussian_1d()
    a = simulate(mdp, UniformPolicy(3), [0.3], 500, seed=42)
    b = simulate(mdp, UniformPolicy(3), [0.3], 500, seed=42)
    assert np.array_equal(a.path, b.path) and np.array_equal(a.actions, b.actions)
    recs = list(a.records())
    for (x, u, c, xn), (x2, *_rest) in zip(recs, recs[1:]):
        assert np.array_equal(xn, x2)
    assert np.all((a.costs >= 0) & (a.costs <= mdp.c_sup))


def test_simulate_state_dependent_matches_fast_path_statistics():
    # a state-dependent wrapper around the constant policy must give the same path
    mdp, _ = linear_gaussian_1d()
    fast = simulate(mdp, ConstantPolicy(1, 3), [0.0], 50, seed=3)
    slow = simulate(mdp, FunctionPolicy(lambda x, r: np.ones(x.shape[0]), 3), [0.0], 50, seed=3)
    assert np.allclose(fast.path, slow.path)


def test_simulate_dimension_mismatch():
    with pytest.raises(InputError):
        simulate(absorbing(), ConstantPolicy(0, 1), [1.0, 2.0], 3, seed=0)
    with pytest.raises(InputError):
        simulate(absorbing(), ConstantPolicy(0, 1), [1.0], 0, seed=0)


def test_simulate_linear_gaussian_contracts():
    # X_10 = 0.5^10 * 4 + noise with sd 0.1 * sqrt(sum 0.25^t) ~ 0.115
    mdp, _ = linear_gaussian_1d(a=0.5, sigma=0.1)
    finals = [abs(simulate(mdp, ConstantPolicy(1, 3), [4.0], 10, seed=s).path[-1, 0])
              for s in range(1000)]
    assert np.mean(finals) < 0.5


def test_trajectory_log_lines():
    tr = simulate(absorbing(), ConstantPolicy(0, 1), [1.0], 2, seed=0)
    buf = io.StringIO()
    tr.write_log(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "0,1.0,0,1.0,0.0"
    assert len(lines) == 2


def test_policies():
    rng = np.random.default_rng(0)
    x = np.zeros((1000, 1))
    u = UniformPolicy(3).act(x, rng)
    assert set(np.unique(u)) == {0, 1, 2}
    assert ConstantPolicy(2, 3)(np.zeros(1)) == 2
    with pytest.raises(InputError):
        ConstantPolicy(3, 3)
    ids = [p.policy_id for p in default_policy_set(2)]
    assert ids == ["constant[0]", "constant[1]", "uniform"]
    bad = FunctionPolicy(lambda x, r: np.full(x.shape[0], 5), 3)
    with pytest.raises(InputError):
        bad.act(x, rng)


def test_certificate_validation_and_moment_constant():
    with pytest.raises(InputError):
        LyapunovCertificate(1.0, 0.5, 1.0)
    with pytest.raises(InputError):
        LyapunovCertificate(2, 0.0, 1.0)
    with pytest.raises(InputError):
        LyapunovCertificate(2, 0.5, -1.0)
    c = LyapunovCertificate(2, 0.5, 1.0)
    assert c.moment_constant(0.9, [0.0]) == pytest.approx(0.9 / 0.55)
    assert c.moment_constant(0.9, [2.0]) == pytest.approx((4 * 0.1 + 0.9) / 0.55)
    assert c.average_form().b == pytest.approx(2.0)
    with pytest.raises(InputError):
        MinorizationCertificate(0.0, None, None)


def test_verify_drift_examples():
    rep = verify_drift(absorbing(), LyapunovCertificate(2, 1.0, 0.0), [[0.0], [3.0]], 100, 0)
    assert np.all(rep.margins <= 0) and rep.passed
    mdp, _ = linear_gaussian_1d(a=0.5, sigma=1.0, action_grid=[0.0])
    probes = [[0.0], [1.0], [-1.0], [5.0], [-5.0]]
    ok = verify_drift(mdp, LyapunovCertificate(2, 0.5, 1.26), probes, 20_000, 1)
    assert ok.passed
    bad = verify_drift(mdp, LyapunovCertificate(2, 0.9, 0.1), probes, 20_000, 1)
    assert bad.flagged[0, 0]  # probe x=0: E V = 1 > 0.1
    with pytest.raises(InputError):
        verify_drift(mdp, LyapunovCertificate(2, 0.5, 1.0), [], 100, 0)
    with pytest.raises(InputError):
        verify_drift(mdp, LyapunovCertificate(2, 0.5, 1.0), probes, 99, 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), x0=st.floats(-10, 10), horizon=st.integers(1, 40))
def test_property_chaining_and_cost_bounds(seed, x0, horizon):
    mdp, _ = linear_gaussian_1d()
    tr = simulate(mdp, UniformPolicy(3), [x0], horizon, seed)
    assert tr.path.shape == (horizon + 1, 1)
    assert np.array_equal(tr.states[1:], tr.next_states[:-1])
    assert np.all((tr.costs >= 0) & (tr.costs <= mdp.c_sup))
