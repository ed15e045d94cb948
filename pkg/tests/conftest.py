import numpy as np
import pytest

from cellfree.apg import recover_power
from cellfree.chanstats import compute_stats
from cellfree.netgen import NetworkConfig, generate_network
from cellfree.project import project_theta_block


def small_instance(seed=0, index=0, **kw):
    base = dict(N=4, L=2, U=2, M=1, K=2, area_m=200.0, seed=seed)
    base.update(kw)
    cfg = NetworkConfig(**base)
    real = generate_network(cfg, index)
    return real, compute_stats(real)


def random_allocation(real, stats, rng, p_assoc=0.7, full_power=False):
    """Feasible allocation with random association and random amplitudes."""
    cfg = real.config
    N, E, U = cfg.N, cfg.n_entities, cfg.U
    assoc = (rng.random((N, E)) < p_assoc).astype(float)
    for e in np.flatnonzero(assoc.sum(0) == 0):
        assoc[rng.integers(N), e] = 1.0
    theta = rng.uniform(0.0, 1.0, (N, E)) * assoc
    theta = project_theta_block(theta, cfg.L)
    if full_power:
        norm = np.linalg.norm(theta, axis=1, keepdims=True)
        theta = np.where(norm > 0, theta / np.where(norm > 0, norm, 1) / np.sqrt(cfg.L), 0.0)
    alloc, _ = recover_power(theta[:, :U], theta[:, U:], assoc[:, :U], assoc[:, U:], stats, cfg.L)
    return alloc


def kink_free_point(obj, L, rng, margin=1e-3, tries=1000):
    """Feasible random point whose hinge arguments all stay at least ``margin``
    away from their kinks."""
    N, E = obj.N, obj.E
    for _ in range(tries):
        z = rng.uniform(0.05, 0.95, (N, E))
        theta = project_theta_block(rng.uniform(0.0, 1.0, (N, E)), L)
        vec = np.concatenate([theta.ravel(), z.ravel()])
        se = obj.se(vec)
        if (np.all(np.abs(theta ** 2 - z ** 2) > margin)
                and np.all(np.abs(1 - (z ** 2).sum(0)) > margin)
                and np.all(np.abs(obj.qos - se) > margin)):
            return vec
    raise RuntimeError("no kink-free point found")


def fd_grad(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
