"""Penalized objective over the relaxed variables (theta, z) and its gradient.

Variables live in two ``(N, U+M)`` arrays whose first ``U`` columns are the
unicast users and the last ``M`` columns the multicast groups. The flat vector
used by the solver is ``concat(theta.ravel(), z.ravel())``, i.e. per AP
``[theta_n1..theta_nU, theta_bar_n1..theta_bar_nM]`` for all APs, followed by
the ``z`` blocks in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .chanstats import EstimationStats
from .netgen import NetworkRealization
from .sinr import multicast_weight


@dataclass
class PenaltyConfig:
    w1: float = 0.8
    w2: float = 0.2
    mu1: float = 1.0
    mu2: float = 1.0
    mu3: float = 1.0
    X: float = 1.0
    varsigma: float = 3.0
    se_qos_uni: float = 0.0
    se_qos_multi: float = 0.0
    K_max: int | None = None  # None means U + M

    def __post_init__(self):
        if min(self.w1, self.w2) < 0 or not math.isclose(self.w1 + self.w2, 1.0, abs_tol=1e-12):
            raise ValueError("weights must be nonnegative and sum to one")
        if min(self.mu1, self.mu2, self.mu3) <= 0 or self.X <= 0:
            raise ValueError("penalty weights and X must be positive")
        if self.varsigma <= 1:
            raise ValueError("varsigma must exceed 1")
        if self.se_qos_uni < 0 or self.se_qos_multi < 0:
            raise ValueError("QoS floors must be nonnegative")

    def k_max(self, n_entities: int) -> int:
        k = n_entities if self.K_max is None else int(self.K_max)
        if not 1 <= k <= n_entities:
            raise ValueError(f"K_max must lie in [1, {n_entities}], got {k}")
        return k

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolverVars:
    theta: np.ndarray  # (N, U+M)
    z: np.ndarray      # (N, U+M)
    U: int

    @property
    def theta_uni(self):
        return self.theta[:, :self.U]

    @property
    def theta_bar(self):
        return self.theta[:, self.U:]

    @property
    def z_uni(self):
        return self.z[:, :self.U]

    @property
    def z_bar(self):
        return self.z[:, self.U:]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.z.ravel()])

    @classmethod
    def from_vector(cls, vec, N: int, U: int, M: int) -> "SolverVars":
        vec = np.asarray(vec, float)
        E = U + M
        if vec.shape != (2 * N * E,):
            raise ValueError(f"expected vector of length {2 * N * E}, got {vec.shape}")
        return cls(vec[:N * E].reshape(N, E).copy(), vec[N * E:].reshape(N, E).copy(), U)

    @classmethod
    def from_blocks(cls, theta, theta_bar, z, z_bar) -> "SolverVars":
        theta = np.asarray(theta, float)
        return cls(np.hstack([theta, np.asarray(theta_bar, float)]),
                   np.hstack([np.asarray(z, float), np.asarray(z_bar, float)]),
                   theta.shape[1])

    def copy(self) -> "SolverVars":
        return SolverVars(self.theta.copy(), self.z.copy(), self.U)


def binary_penalty(vars: SolverVars) -> float:
    z2 = vars.z ** 2
    return float(np.sum(z2 - z2 * z2))


def coupling_penalty(vars: SolverVars) -> float:
    cover = np.maximum(0.0, 1.0 - np.sum(vars.z ** 2, axis=0))
    excess = np.maximum(0.0, vars.theta ** 2 - vars.z ** 2)
    return float(np.sum(cover ** 2) + np.sum(excess ** 2))


class Objective:
    """Penalized objective bound to one realization.

    All per-realization constants are precomputed once; :meth:`value` and
    :meth:`value_and_grad` operate on the flat variable vector.
    """

    def __init__(self, stats: EstimationStats, real: NetworkRealization, cfg: PenaltyConfig):
        ncfg = real.config
        self.cfg = cfg
        self.X = float(cfg.X)
        self.N, self.U, self.M = ncfg.N, ncfg.U, ncfg.M
        self.E = self.U + self.M
        self.size = 2 * self.N * self.E
        group = ncfg.group_of
        self.G = np.hstack([real.beta, real.lam])                          # (N, R)
        self.Wt = np.hstack([np.sqrt(stats.gamma), multicast_weight(stats, group)])
        self.serve = np.concatenate([np.arange(self.U), self.U + group]).astype(int)
        R = self.serve.size
        self.S = np.zeros((R, self.E))
        self.S[np.arange(R), self.serve] = 1.0
        self.n_uni = self.U
        self.wr = np.concatenate([np.full(self.U, cfg.w1), np.full(R - self.U, cfg.w2)])
        self.qos = np.concatenate([np.full(self.U, cfg.se_qos_uni),
                                   np.full(R - self.U, cfg.se_qos_multi)])
        self.pL = ncfg.p_dl * ncfg.L
        self.amp = math.sqrt(ncfg.p_dl) * ncfg.L
        self.k = ncfg.prelog / math.log(2.0)
        self.prelog = ncfg.prelog

    # -- unpacking -----------------------------------------------------------
    def split(self, vec):
        ne = self.N * self.E
        return vec[:ne].reshape(self.N, self.E), vec[ne:].reshape(self.N, self.E)

    # -- core -----------------------------------------------------------------
    def _se(self, theta):
        A = self.amp * np.einsum("nr,nr->r", theta[:, self.serve], self.Wt)
        load = np.einsum("ne,ne->n", theta, theta)
        V = self.pL * (load @ self.G) + 1.0
        Uq = A * A
        se = self.k * np.log1p(Uq / V)
        return A, Uq, V, se

    def se(self, vec) -> np.ndarray:
        """SE of every receiver (unicast users first)."""
        return self._se(self.split(vec)[0])[3]

    def weighted_sse(self, vec) -> float:
        return float(self.wr @ self.se(vec))

    def terms(self, vec) -> dict:
        theta, z = self.split(vec)
        se = self._se(theta)[3]
        h = np.maximum(0.0, self.qos - se)
        z2 = z * z
        c1 = float(h @ h)
        c2 = float(np.sum(z2 - z2 * z2))
        cover = np.maximum(0.0, 1.0 - z2.sum(0))
        excess = np.maximum(0.0, theta * theta - z2)
        c3 = float(cover @ cover + np.sum(excess * excess))
        c = self.cfg
        bracket = c.mu1 * c1 + c.mu2 * c2 + c.mu3 * c3
        sse_w = float(self.wr @ se)
        return {"se": se, "sse_weighted": sse_w, "C1": c1, "C2": c2, "C3": c3,
                "bracket": bracket, "g": -sse_w + self.X * bracket}

    def value(self, vec) -> float:
        theta, z = self.split(vec)
        se = self._se(theta)[3]
        h = np.maximum(0.0, self.qos - se)
        z2 = z * z
        cover = np.maximum(0.0, 1.0 - z2.sum(0))
        excess = np.maximum(0.0, theta * theta - z2)
        c = self.cfg
        bracket = (c.mu1 * (h @ h) + c.mu2 * np.sum(z2 - z2 * z2)
                   + c.mu3 * (cover @ cover + np.sum(excess * excess)))
        return float(-(self.wr @ se) + self.X * bracket)

    def value_and_grad(self, vec):
        theta, z = self.split(vec)
        c = self.cfg
        X = self.X
        A, Uq, V, se = self._se(theta)
        h = np.maximum(0.0, self.qos - se)
        z2 = z * z
        cover = np.maximum(0.0, 1.0 - z2.sum(0))
        excess = np.maximum(0.0, theta * theta - z2)
        bracket = (c.mu1 * (h @ h) + c.mu2 * np.sum(z2 - z2 * z2)
                   + c.mu3 * (cover @ cover + np.sum(excess * excess)))
        g = float(-(self.wr @ se) + X * bracket)

        # d g / d SE_r for every receiver
        coef = -self.wr - 2.0 * X * c.mu1 * h
        UV = Uq + V
        # interference-plus-noise part: dV_r/dtheta_ne = 2 pL theta_ne G_nr
        d_v = coef * self.k * (1.0 / UV - 1.0 / V)
        g_theta = (2.0 * self.pL) * theta * (self.G @ d_v)[:, None]
        # desired-signal part: dU_r/dtheta_ne = 2 A_r amp Wt_nr for e = serve(r)
        d_u = coef * self.k * 2.0 * A * self.amp / UV
        g_theta += (self.Wt * d_u) @ self.S
        g_theta += (4.0 * X * c.mu3) * excess * theta

        g_z = X * (c.mu2 * (2.0 * z - 4.0 * z2 * z)
                   - 4.0 * c.mu3 * excess * z
                   - 4.0 * c.mu3 * cover * z)
        return g, np.concatenate([g_theta.ravel(), g_z.ravel()])


def _as_vec(vars) -> np.ndarray:
    return vars.to_vector() if isinstance(vars, SolverVars) else np.asarray(vars, float)


def qos_penalty(vars, stats, real, cfg: PenaltyConfig) -> float:
    """Sum of squared QoS shortfalls over unicast and multicast users."""
    return Objective(stats, real, cfg).terms(_as_vec(vars))["C1"]


def objective_g(vars, stats, real, cfg: PenaltyConfig) -> float:
    return Objective(stats, real, cfg).value(_as_vec(vars))


def grad_g(vars, stats, real, cfg: PenaltyConfig) -> np.ndarray:
    """Gradient over all ``2 N (U+M)`` coordinates, flat stacked order."""
    return Objective(stats, real, cfg).value_and_grad(_as_vec(vars))[1]
