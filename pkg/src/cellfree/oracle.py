"""Realization-level Monte-Carlo validation.

Draws small-scale fading and pilot noise, runs uplink training with MMSE
estimation, applies MR precoding with the estimates and measures the
use-and-then-forget SINR: squared mean of the desired coefficient over
(its variance + mean-square of every interfering coefficient + unit noise).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chanstats import EstimationStats
from .netgen import NetworkRealization
from .sinr import Allocation, sinr_all

MIN_DRAWS = 1000


@dataclass
class ChannelDraw:
    h_uni: np.ndarray        # (D, N, U, L)
    h_multi: np.ndarray      # (D, N, sum K, L)
    pilot_noise: np.ndarray  # (D, N, L, tau)

    @property
    def draws(self) -> int:
        return self.h_uni.shape[0]


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)


def draw_channels(real: NetworkRealization, draws: int, rng: np.random.Generator) -> ChannelDraw:
    cfg = real.config
    return ChannelDraw(_cn(rng, (draws, cfg.N, cfg.U, cfg.L)),
                       _cn(rng, (draws, cfg.N, cfg.n_multicast_users, cfg.L)),
                       _cn(rng, (draws, cfg.N, cfg.L, cfg.tau)))


def pilot_book(tau: int, U: int, M: int):
    """Orthonormal pilots: the first U + M columns of the tau x tau identity."""
    eye = np.eye(tau, dtype=complex)
    return eye[:, :U], eye[:, U:U + M]


@dataclass
class Training:
    c: np.ndarray       # true unicast channels (D, N, U, L)
    t: np.ndarray       # true multicast channels (D, N, sum K, L)
    c_hat: np.ndarray   # (D, N, U, L)
    t_hat_k: np.ndarray  # per-member estimates (D, N, sum K, L)
    t_hat: np.ndarray   # group estimates (D, N, M, L)


def simulate_training(draw: ChannelDraw, real: NetworkRealization) -> Training:
    cfg = real.config
    tp = cfg.tau_pul
    group = cfg.group_of
    c = np.sqrt(real.beta)[None, :, :, None] * draw.h_uni
    t = np.sqrt(real.lam)[None, :, :, None] * draw.h_multi
    phi, vphi = pilot_book(cfg.tau, cfg.U, cfg.M)
    t_group = np.zeros(t.shape[:2] + (cfg.M, cfg.L), dtype=complex)
    np.add.at(t_group, (slice(None), slice(None), group), t)
    # received pilot block at every AP, (D, N, L, tau)
    Y = np.sqrt(tp) * (np.einsum("dnul,tu->dnlt", c, phi.conj())
                       + np.einsum("dnml,tm->dnlt", t_group, vphi.conj())) + draw.pilot_noise
    y_u = np.einsum("dnlt,tu->dnul", Y, phi)
    y_m = np.einsum("dnlt,tm->dnml", Y, vphi)
    lam_sum = np.zeros((cfg.N, cfg.M))
    np.add.at(lam_sum, (slice(None), group), real.lam)
    c_hat = (np.sqrt(tp) * real.beta / (tp * real.beta + 1.0))[None, :, :, None] * y_u
    coef_k = np.sqrt(tp) * real.lam / (tp * lam_sum[:, group] + 1.0)
    t_hat_k = coef_k[None, :, :, None] * y_m[:, :, group, :]
    t_hat = np.zeros_like(y_m)
    np.add.at(t_hat, (slice(None), slice(None), group), t_hat_k)
    return Training(c, t, c_hat, t_hat_k, t_hat)


def exact_uatf_sinr(alloc: Allocation, stats: EstimationStats, real: NetworkRealization):
    """Use-and-then-forget SINR with the exact mean of the multicast desired
    coefficient under a shared group pilot, E{t_k^T t_hat^*} = L lambda_k zeta /
    sum(lambda). Unicast values coincide with the closed form."""
    cfg = real.config
    p, L = cfg.p_dl, cfg.L
    group = cfg.group_of
    s_u, _ = sinr_all(alloc, stats, real)
    lam_sum = stats.lam_sum[:, group]
    mean_w = np.zeros_like(real.lam)
    np.divide(real.lam * stats.zeta[:, group], lam_sum, out=mean_w, where=lam_sum > 0)
    amp = np.sqrt(p) * L * np.sum((alloc.a_bar * np.sqrt(alloc.eta_bar))[:, group] * mean_w, axis=0)
    load_m = (alloc.a_bar * alloc.eta_bar * stats.zeta).sum(1)
    load_u = (alloc.a * alloc.eta * stats.gamma).sum(1)
    v = p * L * (load_m + load_u) @ real.lam + 1.0
    return s_u, amp ** 2 / v


@dataclass
class OracleResult:
    sinr_uni: np.ndarray
    sinr_multi: np.ndarray
    closed_uni: np.ndarray
    closed_multi: np.ndarray
    exact_multi: np.ndarray
    power_ratio: np.ndarray     # per AP, empirical E||x_n||^2 / p_dl
    power_stderr: np.ndarray
    draws: int

    def rel_err(self):
        def r(a, b):
            out = np.zeros_like(a)
            np.divide(np.abs(a - b), np.abs(b), out=out, where=b != 0)
            out[(b == 0) & (a != 0)] = np.inf
            return out
        return r(self.sinr_uni, self.closed_uni), r(self.sinr_multi, self.closed_multi)

    def to_csv(self, path, group_of=None) -> None:
        eu, em = self.rel_err()
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "user", "group", "closed_form", "empirical", "rel_err",
                        "exact_mean_form"])
            for u in range(self.sinr_uni.size):
                w.writerow(["unicast", u, -1, repr(float(self.closed_uni[u])),
                            repr(float(self.sinr_uni[u])), repr(float(eu[u])),
                            repr(float(self.closed_uni[u]))])
            for j in range(self.sinr_multi.size):
                g = int(group_of[j]) if group_of is not None else ""
                w.writerow(["multicast", j, g, repr(float(self.closed_multi[j])),
                            repr(float(self.sinr_multi[j])), repr(float(em[j])),
                            repr(float(self.exact_multi[j]))])


def uatf_sinr_mc(alloc: Allocation, stats: EstimationStats, real: NetworkRealization,
                 draws: int, rng: np.random.Generator, batch: int = 20000) -> OracleResult:
    if draws < MIN_DRAWS:
        raise ValueError(f"need at least {MIN_DRAWS} channel draws, got {draws}")
    cfg = real.config
    U, M, Kt = cfg.U, cfg.M, cfg.n_multicast_users
    group = cfg.group_of
    R, S = U + Kt, U + M
    serve = np.concatenate([np.arange(U), U + group]).astype(int)
    amp = np.sqrt(cfg.p_dl) * np.hstack([alloc.a * np.sqrt(alloc.eta),
                                         alloc.a_bar * np.sqrt(alloc.eta_bar)])  # (N, S)
    sum_g = np.zeros((R, S), dtype=complex)
    sum_g2 = np.zeros((R, S))
    pw_sum = np.zeros(cfg.N)
    pw_sq = np.zeros(cfg.N)
    done = 0
    while done < draws:
        d = min(batch, draws - done)
        tr = simulate_training(draw_channels(real, d, rng), real)
        rx = np.concatenate([tr.c, tr.t], axis=2)               # (d, N, R, L)
        pre = np.concatenate([tr.c_hat, tr.t_hat], axis=2)      # (d, N, S, L)
        ip = np.einsum("dnrl,dnsl->dnrs", rx, pre.conj())
        coef = np.einsum("dnrs,ns->drs", ip, amp)               # (d, R, S)
        sum_g += coef.sum(0)
        sum_g2 += (np.abs(coef) ** 2).sum(0)
        # symbols are independent with unit power
        pw = np.einsum("dnsl,ns->dn", np.abs(pre) ** 2, amp ** 2) / cfg.p_dl
        pw_sum += pw.sum(0)
        pw_sq += (pw ** 2).sum(0)
        done += d
    mean_g = sum_g / draws
    ms_g = sum_g2 / draws
    rr = np.arange(R)
    desired = mean_g[rr, serve]
    desired_var = ms_g[rr, serve] - np.abs(desired) ** 2
    interf = ms_g.sum(1) - ms_g[rr, serve]
    sinr = np.abs(desired) ** 2 / (desired_var + interf + 1.0)
    closed_u, closed_m = sinr_all(alloc, stats, real)
    _, exact_m = exact_uatf_sinr(alloc, stats, real)
    pw_mean = pw_sum / draws
    pw_var = np.maximum(pw_sq / draws - pw_mean ** 2, 0.0)
    return OracleResult(sinr[:U], sinr[U:], closed_u, closed_m, exact_m, pw_mean,
                        np.sqrt(pw_var / draws), draws)


def estimate_statistics_mc(real: NetworkRealization, draws: int, rng: np.random.Generator,
                           batch: int = 20000) -> dict:
    """Per-entry empirical second moments of the estimates (to compare with
    gamma, xi, zeta)."""
    cfg = real.config
    acc = {"gamma": np.zeros((cfg.N, cfg.U)), "xi": np.zeros((cfg.N, cfg.n_multicast_users)),
           "zeta": np.zeros((cfg.N, cfg.M))}
    cross = np.zeros((cfg.N, cfg.U, cfg.M), dtype=complex)
    done = 0
    while done < draws:
        d = min(batch, draws - done)
        tr = simulate_training(draw_channels(real, d, rng), real)
        acc["gamma"] += (np.abs(tr.c_hat) ** 2).mean(-1).sum(0)
        acc["xi"] += (np.abs(tr.t_hat_k) ** 2).mean(-1).sum(0)
        acc["zeta"] += (np.abs(tr.t_hat) ** 2).mean(-1).sum(0)
        cross += np.einsum("dnul,dnml->num", tr.c_hat, tr.t_hat.conj()) / cfg.L
        done += d
    out = {k: v / draws for k, v in acc.items()}
    out["cross_uni_multi"] = cross / draws
    return out


def certify(alloc: Allocation, stats: EstimationStats, real: NetworkRealization, draws: int,
            rng: np.random.Generator, tol: float = 0.03) -> dict:
    """Closed-form vs. empirical gates for one allocation."""
    res = uatf_sinr_mc(alloc, stats, real, draws, rng)
    eu, em = res.rel_err()
    ex = np.zeros_like(res.exact_multi)
    np.divide(np.abs(res.sinr_multi - res.exact_multi), res.exact_multi, out=ex,
              where=res.exact_multi != 0)
    power_ok = bool(np.all(res.power_ratio <= 1.0 + 3.0 * res.power_stderr))
    return {
        "result": res,
        "unicast_ok": bool(np.all(eu <= tol)),
        "multicast_ok": bool(np.all(em <= tol)),
        "multicast_exact_mean_ok": bool(np.all(ex <= tol)),
        "power_ok": power_ok,
        "max_rel_err_unicast": float(eu.max(initial=0.0)),
        "max_rel_err_multicast": float(em.max(initial=0.0)),
        "max_rel_err_multicast_exact_mean": float(ex.max(initial=0.0)),
    }
