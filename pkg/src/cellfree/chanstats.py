"""Second-order statistics of the uplink MMSE channel estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netgen import NetworkRealization


def gamma(beta, tau_pul):
    """Variance of the MMSE estimate of a unicast channel with gain ``beta``."""
    beta = np.asarray(beta, float)
    return tau_pul * beta ** 2 / (tau_pul * beta + 1.0)


def xi(lambda_group, k, tau_pul):
    """Variance of the MMSE estimate of member ``k``; all members share one
    pilot so the denominator sums the whole group."""
    lg = np.asarray(lambda_group, float)
    return tau_pul * lg[k] ** 2 / (tau_pul * lg.sum() + 1.0)


def zeta(lambda_group, tau_pul):
    """Mean square of the group estimate (sum of member estimates)."""
    s = float(np.sum(lambda_group))
    return tau_pul * s ** 2 / (tau_pul * s + 1.0)


@dataclass(frozen=True)
class EstimationStats:
    gamma: np.ndarray   # (N, U)
    xi: np.ndarray      # (N, sum K)
    zeta: np.ndarray    # (N, M)
    tau_pul: float
    lam_sum: np.ndarray  # (N, M) sum of member gains per group


def compute_stats(real: NetworkRealization) -> EstimationStats:
    cfg = real.config
    tp = cfg.tau_pul
    g = gamma(real.beta, tp)
    group = cfg.group_of
    lam_sum = np.zeros((cfg.N, cfg.M))
    np.add.at(lam_sum, (slice(None), group), real.lam)
    xi_ = tp * real.lam ** 2 / (tp * lam_sum[:, group] + 1.0)
    zeta_ = tp * lam_sum ** 2 / (tp * lam_sum + 1.0)
    return EstimationStats(g, xi_, zeta_, tp, lam_sum)
