"""Closed-form downlink SINR / SE under MR precoding.

Two parameterizations are provided: association indicators plus power
coefficients (``Allocation``), and the per-link amplitudes used by the
optimizer (``ThetaVars``, theta = sqrt(eta * gamma)).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chanstats import EstimationStats
from .netgen import NetworkRealization

POWER_TOL = 1e-9


@dataclass
class Allocation:
    a: np.ndarray         # (N, U) binary
    a_bar: np.ndarray     # (N, M) binary
    eta: np.ndarray       # (N, U) >= 0
    eta_bar: np.ndarray   # (N, M) >= 0

    def per_ap_load(self, stats: EstimationStats, L: int) -> np.ndarray:
        """Left-hand side of the per-AP power constraint (must be <= 1)."""
        return (L * (self.a ** 2 * self.eta * stats.gamma).sum(1)
                + L * (self.a_bar ** 2 * self.eta_bar * stats.zeta).sum(1))

    def check(self, stats: EstimationStats, L: int, tol: float = POWER_TOL) -> None:
        for name in ("a", "a_bar"):
            v = getattr(self, name)
            if not np.all((v == 0) | (v == 1)):
                raise ValueError(f"{name} must be binary")
        if np.any(self.eta < 0) or np.any(self.eta_bar < 0):
            raise ValueError("power coefficients must be nonnegative")
        if np.any((self.a == 0) & (self.eta != 0)) or np.any((self.a_bar == 0) & (self.eta_bar != 0)):
            raise ValueError("power allocated on an unassociated link")
        load = self.per_ap_load(stats, L)
        if np.any(load > 1 + tol):
            raise ValueError(f"per-AP power constraint violated: max load {load.max():.6g}")

    @classmethod
    def zeros(cls, N: int, U: int, M: int) -> "Allocation":
        return cls(np.zeros((N, U)), np.zeros((N, M)), np.zeros((N, U)), np.zeros((N, M)))


@dataclass
class ThetaVars:
    theta: np.ndarray      # (N, U)
    theta_bar: np.ndarray  # (N, M)

    @classmethod
    def from_allocation(cls, alloc: Allocation, stats: EstimationStats) -> "ThetaVars":
        return cls(np.sqrt(alloc.a * alloc.eta * stats.gamma),
                   np.sqrt(alloc.a_bar * alloc.eta_bar * stats.zeta))

    def per_ap_load(self, L: int) -> np.ndarray:
        return L * ((self.theta ** 2).sum(1) + (self.theta_bar ** 2).sum(1))


def _radio(real: NetworkRealization):
    cfg = real.config
    return cfg.p_dl, cfg.L


def sinr_unicast(alloc: Allocation, stats: EstimationStats, real: NetworkRealization, u: int) -> float:
    p, L = _radio(real)
    a, eta, g = alloc.a, alloc.eta, stats.gamma
    num = (np.sqrt(p) * L * np.sum(a[:, u] * np.sqrt(eta[:, u]) * g[:, u])) ** 2
    b = real.beta[:, u]
    den = (p * L * np.sum(a * eta * b[:, None] * g)
           + p * L * np.sum(alloc.a_bar * alloc.eta_bar * b[:, None] * stats.zeta)
           + 1.0)
    return float(num / den)


def _member_index(real: NetworkRealization, m: int, k: int) -> int:
    cfg = real.config
    if not 0 <= k < cfg.K[m]:
        raise IndexError(f"group {m} has {cfg.K[m]} members, got k={k}")
    return int(sum(cfg.K[:m]) + k)


def sinr_multicast(alloc: Allocation, stats: EstimationStats, real: NetworkRealization,
                   m: int, k: int) -> float:
    p, L = _radio(real)
    j = _member_index(real, m, k)
    lam = real.lam[:, j]
    num = (np.sqrt(p) * L * np.sum(alloc.a_bar[:, m] * np.sqrt(alloc.eta_bar[:, m]) * stats.xi[:, j])) ** 2
    den = (p * L * np.sum(alloc.a_bar * alloc.eta_bar * lam[:, None] * stats.zeta)
           + p * L * np.sum(alloc.a * alloc.eta * lam[:, None] * stats.gamma)
           + 1.0)
    return float(num / den)


def multicast_weight(stats: EstimationStats, group_of: np.ndarray) -> np.ndarray:
    """(N, sum K) numerator weight xi / sqrt(zeta) of every multicast user."""
    zg = stats.zeta[:, group_of]
    out = np.zeros_like(stats.xi)
    np.divide(stats.xi, np.sqrt(zg), out=out, where=zg > 0)
    return out


def sinr_unicast_theta(vars: ThetaVars, stats: EstimationStats, real: NetworkRealization, u: int) -> float:
    p, L = _radio(real)
    num = (np.sqrt(p) * L * np.sum(vars.theta[:, u] * np.sqrt(stats.gamma[:, u]))) ** 2
    b = real.beta[:, u]
    den = (p * L * np.sum(vars.theta ** 2 * b[:, None])
           + p * L * np.sum(vars.theta_bar ** 2 * b[:, None]) + 1.0)
    return float(num / den)


def sinr_multicast_theta(vars: ThetaVars, stats: EstimationStats, real: NetworkRealization,
                         m: int, k: int) -> float:
    p, L = _radio(real)
    j = _member_index(real, m, k)
    if not np.any(stats.zeta[:, m] > 0):
        return 0.0
    w = multicast_weight(stats, real.config.group_of)[:, j]
    lam = real.lam[:, j]
    num = (np.sqrt(p) * L * np.sum(vars.theta_bar[:, m] * w)) ** 2
    den = (p * L * np.sum(vars.theta_bar ** 2 * lam[:, None])
           + p * L * np.sum(vars.theta ** 2 * lam[:, None]) + 1.0)
    return float(num / den)


def sinr_all_theta(theta: np.ndarray, theta_bar: np.ndarray, stats: EstimationStats,
                   real: NetworkRealization) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized SINR of every unicast user and every multicast user."""
    p, L = _radio(real)
    group = real.config.group_of
    w = multicast_weight(stats, group)
    amp_u = np.sqrt(p) * L * np.sum(theta * np.sqrt(stats.gamma), axis=0)
    amp_m = np.sqrt(p) * L * np.sum(theta_bar[:, group] * w, axis=0)
    load = (theta ** 2).sum(1) + (theta_bar ** 2).sum(1)
    v_u = p * L * load @ real.beta + 1.0
    v_m = p * L * load @ real.lam + 1.0
    return amp_u ** 2 / v_u, amp_m ** 2 / v_m


def sinr_all(alloc: Allocation, stats: EstimationStats, real: NetworkRealization):
    th = ThetaVars.from_allocation(alloc, stats)
    return sinr_all_theta(th.theta, th.theta_bar, stats, real)


def se_from_sinr(sinr, T: int, tau: int):
    if tau >= T:
        raise ValueError(f"pilot length tau={tau} must be smaller than T={T}")
    sinr = np.asarray(sinr, float)
    if np.any(sinr < 0):
        raise ValueError("SINR must be nonnegative")
    out = (T - tau) / T * np.log2(1.0 + sinr)
    return out if out.ndim else float(out)


@dataclass
class SeReport:
    se_uni: np.ndarray     # (U,)
    se_multi: np.ndarray   # (sum K,), grouped by ``group_of``
    group_of: np.ndarray
    sse_weighted: float
    prelog: float
    w1: float = 1.0
    w2: float = 0.0

    @property
    def sse(self) -> float:
        """Unweighted sum SE over all users."""
        return float(self.se_uni.sum() + self.se_multi.sum())

    def se_multi_group(self, m: int) -> np.ndarray:
        return self.se_multi[self.group_of == m]

    def rows(self):
        for u, s in enumerate(self.se_uni):
            yield {"kind": "unicast", "user": u, "group": -1, "se": float(s)}
        for j, s in enumerate(self.se_multi):
            yield {"kind": "multicast", "user": j, "group": int(self.group_of[j]), "se": float(s)}

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["kind", "user", "group", "se"])
            w.writeheader()
            for r in self.rows():
                r = dict(r, se=repr(r["se"]))
                w.writerow(r)

    def summary(self) -> dict:
        return {
            "sse_weighted": self.sse_weighted,
            "sse": self.sse,
            "prelog": self.prelog,
            "w1": self.w1,
            "w2": self.w2,
            "min_se_unicast": float(self.se_uni.min()) if self.se_uni.size else None,
            "min_se_multicast": float(self.se_multi.min()) if self.se_multi.size else None,
            "n_unicast": int(self.se_uni.size),
            "n_multicast": int(self.se_multi.size),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))


def se_report(alloc: Allocation, stats: EstimationStats, real: NetworkRealization,
              w1: float = 1.0, w2: float = 0.0) -> SeReport:
    cfg = real.config
    s_u, s_m = sinr_all(alloc, stats, real)
    se_u = se_from_sinr(s_u, cfg.T, cfg.tau)
    se_m = se_from_sinr(s_m, cfg.T, cfg.tau)
    return SeReport(np.atleast_1d(se_u), np.atleast_1d(se_m), cfg.group_of,
                    float(w1 * np.sum(se_u) + w2 * np.sum(se_m)), cfg.prelog, w1, w2)
