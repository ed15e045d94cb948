import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cellfree.chanstats import compute_stats
from cellfree.netgen import NetworkConfig, from_gains
from cellfree.penalty import (Objective, PenaltyConfig, SolverVars, binary_penalty,
                              coupling_penalty, grad_g, objective_g, qos_penalty)

from conftest import fd_grad, kink_free_point, small_instance


def _one_user(qos=0.5):
    cfg = NetworkConfig(N=1, U=1, M=0, K=(), L=2)
    real = from_gains(cfg, [[1e-3]], np.zeros((1, 0)))
    return real, compute_stats(real), PenaltyConfig(se_qos_uni=qos)


# -- penalty pieces ----------------------------------------------------------------

def test_qos_penalty_examples():
    real, stats, cfg = _one_user(0.5)
    zero = SolverVars(np.zeros((1, 1)), np.ones((1, 1)), 1)
    assert qos_penalty(zero, stats, real, cfg) == pytest.approx(0.25)
    real, stats, cfg = _one_user(0.0)
    v = SolverVars(np.full((1, 1), 0.3), np.ones((1, 1)), 1)
    assert qos_penalty(v, stats, real, cfg) == 0.0
    real, stats, cfg = _one_user(1e-9)
    assert qos_penalty(v, stats, real, cfg) == 0.0


def test_binary_penalty_examples():
    N, E = 3, 2
    assert binary_penalty(SolverVars(np.zeros((N, E)), np.zeros((N, E)), 1)) == 0
    assert binary_penalty(SolverVars(np.zeros((N, E)), np.ones((N, E)), 1)) == 0
    z = np.zeros((N, E))
    z[1, 0] = 1 / np.sqrt(2)
    assert binary_penalty(SolverVars(np.zeros((N, E)), z, 1)) == pytest.approx(0.25)
    grid = np.linspace(0, 1, 100_001)
    assert grid[np.argmax(grid ** 2 - grid ** 4)] == pytest.approx(1 / np.sqrt(2), abs=1e-5)


def test_coupling_penalty_examples():
    assert coupling_penalty(SolverVars(np.full((2, 2), 0.9), np.ones((2, 2)), 1)) == 0
    assert coupling_penalty(SolverVars(np.zeros((1, 1)), np.zeros((1, 1)), 1)) == 1.0
    theta = np.array([[0.6], [0.0]])
    z = np.array([[0.5], [1.0]])  # AP 1 covers the user
    assert coupling_penalty(SolverVars(theta, z, 1)) == pytest.approx(0.0121, rel=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_penalties_nonnegative(seed):
    rng = np.random.default_rng(seed)
    v = SolverVars(rng.uniform(0, 1, (3, 4)), rng.uniform(0, 1, (3, 4)), 2)
    assert binary_penalty(v) >= 0 and coupling_penalty(v) >= 0


# -- objective ---------------------------------------------------------------------

def test_objective_without_penalties_is_negative_sse():
    real, stats = small_instance(2)
    cfg = PenaltyConfig()
    obj = Objective(stats, real, cfg)
    theta = np.full((4, 3), 0.2)
    vec = np.concatenate([theta.ravel(), np.ones(12)])
    t = obj.terms(vec)
    assert t["bracket"] == 0
    assert obj.value(vec) == -t["sse_weighted"]
    assert t["sse_weighted"] > 0


def test_objective_zero_power_is_zero():
    real, stats = small_instance(2)
    z = np.zeros((4, 3))
    z[0] = 1.0
    v = SolverVars(np.zeros((4, 3)), z, 2)
    assert objective_g(v, stats, real, PenaltyConfig()) == 0.0


def test_doubling_X_doubles_bracket():
    real, stats = small_instance(3)
    rng = np.random.default_rng(0)
    vec = np.concatenate([rng.uniform(0, 0.3, 12), rng.uniform(0, 1, 12)])
    t1 = Objective(stats, real, PenaltyConfig(X=1.0, se_qos_uni=2.0)).terms(vec)
    t2 = Objective(stats, real, PenaltyConfig(X=2.0, se_qos_uni=2.0)).terms(vec)
    assert t1["bracket"] > 0
    assert t2["sse_weighted"] == t1["sse_weighted"]
    assert (t2["g"] + t2["sse_weighted"]) == pytest.approx(2 * (t1["g"] + t1["sse_weighted"]))


def test_value_and_grad_consistent_with_value():
    real, stats = small_instance(4)
    obj = Objective(stats, real, PenaltyConfig(se_qos_uni=0.4, se_qos_multi=0.2))
    rng = np.random.default_rng(1)
    vec = np.concatenate([rng.uniform(0, 0.3, 12), rng.uniform(0, 1, 12)])
    assert obj.value_and_grad(vec)[0] == obj.value(vec)
    assert obj.value(vec) == obj.terms(vec)["g"]


# -- gradient -------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    real, stats = small_instance(seed, N=3, U=2, M=2, K=(2, 1))
    cfg = PenaltyConfig(se_qos_uni=1.0, se_qos_multi=0.3, X=2.0, mu1=1.5, mu2=0.7, mu3=1.2)
    obj = Objective(stats, real, cfg)
    x = kink_free_point(obj, real.config.L, rng)
    ga = obj.value_and_grad(x)[1]
    gf = fd_grad(obj.value, x)
    assert np.linalg.norm(ga - gf) / np.linalg.norm(gf) <= 1e-5


def test_grad_z_at_binary_points():
    real, stats = small_instance(5)
    cfg = PenaltyConfig(mu2=1.3, X=2.5)
    obj = Objective(stats, real, cfg)
    z = np.ones((4, 3))
    z[2, 1] = 0.0
    theta = np.zeros((4, 3))
    theta[0, 0] = 0.3
    g = obj.value_and_grad(np.concatenate([theta.ravel(), z.ravel()]))[1]
    gz = g[12:].reshape(4, 3)
    assert np.all(gz[z == 1] == pytest.approx(-2 * cfg.mu2 * cfg.X))
    assert gz[2, 1] == 0.0


def test_grad_theta_nonpositive_without_qos():
    real, stats = small_instance(6)
    obj = Objective(stats, real, PenaltyConfig())
    z = np.ones(12)
    g0 = obj.value_and_grad(np.concatenate([np.zeros(12), z]))[1][:12]
    assert np.all(g0 <= 0)
    g1 = obj.value_and_grad(np.concatenate([np.full(12, 1e-4), z]))[1][:12]
    # a tiny common amplitude only helps: every served entity pulls power up
    assert np.all(g1 < 0)


def test_grad_g_module_function():
    real, stats = small_instance(7)
    cfg = PenaltyConfig()
    v = SolverVars(np.full((4, 3), 0.1), np.ones((4, 3)), 2)
    g = grad_g(v, stats, real, cfg)
    assert g.shape == (2 * 4 * 3,)
    np.testing.assert_array_equal(g, Objective(stats, real, cfg).value_and_grad(v.to_vector())[1])


def test_ap_permutation_invariance():
    real, stats = small_instance(8, N=5)
    cfg = PenaltyConfig(se_qos_uni=0.5, se_qos_multi=0.5)
    rng = np.random.default_rng(3)
    theta = rng.uniform(0, 0.3, (5, 3))
    z = rng.uniform(0, 1, (5, 3))
    perm = np.array([3, 0, 4, 1, 2])
    g = objective_g(SolverVars(theta, z, 2), stats, real, cfg)
    cfgn = real.config
    real_p = from_gains(cfgn, real.beta[perm], real.lam[perm])
    stats_p = compute_stats(real_p)
    g_p = objective_g(SolverVars(theta[perm], z[perm], 2), stats_p, real_p, cfg)
    assert g_p == pytest.approx(g, rel=1e-12)


# -- vars / config ----------------------------------------------------------------

def test_solver_vars_round_trip():
    rng = np.random.default_rng(0)
    v = SolverVars.from_blocks(rng.random((3, 2)), rng.random((3, 1)), rng.random((3, 2)),
                               rng.random((3, 1)))
    w = SolverVars.from_vector(v.to_vector(), 3, 2, 1)
    np.testing.assert_array_equal(w.theta, v.theta)
    np.testing.assert_array_equal(w.z_bar, v.z_bar)
    # per-AP stacking: theta of AP 0 first, unicast before multicast
    assert v.to_vector()[2] == v.theta_bar[0, 0]
    with pytest.raises(ValueError):
        SolverVars.from_vector(np.zeros(5), 3, 2, 1)


@pytest.mark.parametrize("kw", [dict(w1=0.5, w2=0.6), dict(mu1=0), dict(X=0), dict(varsigma=1.0),
                                dict(se_qos_uni=-1)])
def test_penalty_config_validation(kw):
    with pytest.raises(ValueError):
        PenaltyConfig(**kw)


def test_k_max_bounds():
    assert PenaltyConfig().k_max(5) == 5
    assert PenaltyConfig(K_max=2).k_max(5) == 2
    with pytest.raises(ValueError):
        PenaltyConfig(K_max=6).k_max(5)
