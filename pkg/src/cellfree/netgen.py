"""Network realizations: placement, path loss, correlated shadowing and
noise-normalized large-scale fading gains.

Gains are stored divided by the linear noise power expressed in mW, and the
transmit powers carried by :class:`NetworkConfig` are in mW, so that a product
such as ``p_dl * beta`` is directly an SNR.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    N: int = 100                  # APs
    L: int = 4                    # antennas per AP
    U: int = 16                   # unicast users
    M: int = 3                    # multicast groups
    K: tuple[int, ...] = (4, 4, 4)  # users per multicast group
    area_m: float = 1000.0
    T: int = 200                  # coherence interval, symbols
    tau: int | None = None        # pilot length, defaults to U + M
    p_dl_mw: float = 1000.0
    p_ul_mw: float = 100.0
    noise_dbm: float = -92.0
    shadow_sigma_db: float = 4.0
    shadow_decorr_m: float = 9.0
    pl_const_db: float = -30.5
    pl_slope: float = 36.7
    bandwidth_hz: float = 20e6
    seed: int = 0

    def __post_init__(self):
        K = self.K
        if isinstance(K, (int, np.integer)):
            K = (int(K),) * self.M
        object.__setattr__(self, "K", tuple(int(k) for k in K))
        if self.tau is None:
            object.__setattr__(self, "tau", self.U + self.M)
        self.validate()

    def validate(self) -> None:
        if self.N < 1 or self.L < 1:
            raise ValueError("N and L must be >= 1")
        if self.U < 0 or self.M < 0 or self.U + self.M < 1:
            raise ValueError("need at least one unicast user or multicast group")
        if len(self.K) != self.M:
            raise ValueError(f"K has {len(self.K)} entries, expected M={self.M}")
        if any(k < 1 for k in self.K):
            raise ValueError("every multicast group needs at least one member")
        if not (self.U + self.M <= self.tau <= self.T):
            raise ValueError(
                f"pilot length must satisfy U+M <= tau <= T, got "
                f"U+M={self.U + self.M}, tau={self.tau}, T={self.T}")
        if self.tau == self.T:
            raise ValueError("tau == T leaves no symbols for downlink data")
        if self.p_dl_mw <= 0 or self.p_ul_mw <= 0:
            raise ValueError("transmit powers must be positive")
        if self.area_m <= 0:
            raise ValueError("area_m must be positive")
        if self.shadow_sigma_db < 0 or self.shadow_decorr_m <= 0:
            raise ValueError("invalid shadowing parameters")

    @property
    def n_multicast_users(self) -> int:
        return sum(self.K)

    @property
    def n_entities(self) -> int:
        return self.U + self.M

    @property
    def noise_mw(self) -> float:
        return 10.0 ** (self.noise_dbm / 10.0)

    @property
    def p_dl(self) -> float:
        return self.p_dl_mw

    @property
    def p_ul(self) -> float:
        return self.p_ul_mw

    @property
    def tau_pul(self) -> float:
        return self.tau * self.p_ul_mw

    @property
    def prelog(self) -> float:
        return (self.T - self.tau) / self.T

    @property
    def group_of(self) -> np.ndarray:
        """Group index of every multicast user, in storage order."""
        return np.repeat(np.arange(self.M), self.K)

    def replace(self, **changes) -> "NetworkConfig":
        d = asdict(self)
        d.update(changes)
        if "M" in changes and "K" not in changes:
            k0 = self.K[0] if self.K else 1
            d["K"] = (k0,) * changes["M"]
        if ("U" in changes or "M" in changes) and "tau" not in changes:
            d["tau"] = None
        return NetworkConfig(**d)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network keys: {sorted(unknown)}")
        d = dict(d)
        if "K" in d and isinstance(d["K"], list):
            d["K"] = tuple(d["K"])
        return cls(**d)


@dataclass(frozen=True)
class Geometry:
    ap_xy: np.ndarray     # (N, 2)
    uni_xy: np.ndarray    # (U, 2)
    multi_xy: np.ndarray  # (sum K, 2)

    @property
    def user_xy(self) -> np.ndarray:
        """All users, unicast first, then multicast in group order."""
        return np.vstack([self.uni_xy, self.multi_xy])


@dataclass(frozen=True)
class NetworkRealization:
    config: NetworkConfig
    ap_xy: np.ndarray
    uni_xy: np.ndarray
    multi_xy: np.ndarray
    beta: np.ndarray      # (N, U)
    lam: np.ndarray       # (N, sum K); column j belongs to group config.group_of[j]
    shadow_db: np.ndarray = field(repr=False, default=None)

    def lambda_group(self, m: int) -> np.ndarray:
        """(N, K_m) gains of the members of group ``m``."""
        return self.lam[:, self.config.group_of == m]


def realization_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream for realization ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_topology(config: NetworkConfig, rng: np.random.Generator | None = None) -> Geometry:
    if rng is None:
        rng = realization_rng(config.seed)
    a = config.area_m
    ap = rng.uniform(0.0, a, size=(config.N, 2))
    uni = rng.uniform(0.0, a, size=(config.U, 2))
    multi = rng.uniform(0.0, a, size=(config.n_multicast_users, 2))
    return Geometry(ap, uni, multi)


def path_loss_db(d, const_db: float = -30.5, slope: float = 36.7):
    """Distance-based path loss in dB, referenced to 1 m."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    out = const_db - slope * np.log10(d)
    return out if out.ndim else float(out)


def shadow_covariance(user_xy: np.ndarray, sigma_db: float = 4.0, decorr_m: float = 9.0) -> np.ndarray:
    omega = np.linalg.norm(user_xy[:, None, :] - user_xy[None, :, :], axis=-1)
    return sigma_db ** 2 * 2.0 ** (-omega / decorr_m)


def _factor(cov: np.ndarray, retries: int = 3) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-9 * cov[0, 0] if cov.size else 0.0
    eye = np.eye(cov.shape[0])
    for attempt in range(retries):
        log.warning("shadowing covariance not positive definite, adding jitter %.3g", jitter)
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"shadowing covariance could not be factorized after {retries} jitter retries")


def sample_shadowing(user_xy, n_ap, rng, sigma_db=4.0, decorr_m=9.0) -> np.ndarray:
    """(n_ap, H) shadowing in dB: correlated across users seen from the same
    AP, independent across APs."""
    H = len(user_xy)
    if H == 0:
        return np.zeros((n_ap, 0))
    if sigma_db == 0:
        return np.zeros((n_ap, H))
    chol = _factor(shadow_covariance(np.asarray(user_xy, float), sigma_db, decorr_m))
    z = rng.standard_normal((n_ap, H))
    return z @ chol.T


def shadow_field(geometry: Geometry, config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    return sample_shadowing(geometry.user_xy, len(geometry.ap_xy), rng,
                            config.shadow_sigma_db, config.shadow_decorr_m)


def ap_user_distances(geometry: Geometry) -> np.ndarray:
    d = np.linalg.norm(geometry.ap_xy[:, None, :] - geometry.user_xy[None, :, :], axis=-1)
    # path-loss model is referenced to 1 m
    return np.maximum(d, 1.0)


def large_scale(geometry: Geometry, F: np.ndarray, config: NetworkConfig) -> NetworkRealization:
    d = ap_user_distances(geometry)
    pl = path_loss_db(d, config.pl_const_db, config.pl_slope)
    gain = 10.0 ** ((pl + F) / 10.0) / config.noise_mw
    U = config.U
    return NetworkRealization(config, geometry.ap_xy, geometry.uni_xy, geometry.multi_xy,
                              beta=gain[:, :U], lam=gain[:, U:], shadow_db=F)


def generate_network(config: NetworkConfig, index: int = 0) -> NetworkRealization:
    """Realization ``index`` of the ensemble defined by ``config`` (and its seed)."""
    rng = realization_rng(config.seed, index)
    geo = generate_topology(config, rng)
    F = shadow_field(geo, config, rng)
    return large_scale(geo, F, config)


def load_config_file(path) -> dict:
    """Read a YAML config file into a plain dict (sections: network, solver,
    experiment)."""
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return data


def load_network_config(path) -> NetworkConfig:
    return NetworkConfig.from_dict(load_config_file(path).get("network", {}))


def realization_to_csv(real: NetworkRealization, path) -> None:
    """One row per (AP, user) link with positions, distance and gain."""
    cfg = real.config
    geo = Geometry(real.ap_xy, real.uni_xy, real.multi_xy)
    d = ap_user_distances(geo)
    gains = np.hstack([real.beta, real.lam])
    kinds = ["unicast"] * cfg.U + ["multicast"] * cfg.n_multicast_users
    groups = [-1] * cfg.U + list(cfg.group_of)
    users = list(range(cfg.U)) + list(range(cfg.n_multicast_users))
    uxy = geo.user_xy
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ap", "ap_x", "ap_y", "kind", "user", "group", "user_x", "user_y",
                    "distance_m", "shadow_db", "gain"])
        for n in range(cfg.N):
            for h in range(len(kinds)):
                w.writerow([n, f"{real.ap_xy[n, 0]:.6f}", f"{real.ap_xy[n, 1]:.6f}",
                            kinds[h], users[h], groups[h],
                            f"{uxy[h, 0]:.6f}", f"{uxy[h, 1]:.6f}", f"{d[n, h]:.6f}",
                            f"{real.shadow_db[n, h]:.6f}" if real.shadow_db is not None else "",
                            repr(float(gains[n, h]))])


def from_gains(config: NetworkConfig, beta: Sequence, lam: Sequence) -> NetworkRealization:
    """Realization with hand-specified gains (no geometry), for small studies
    and tests."""
    beta = np.asarray(beta, float).reshape(config.N, config.U)
    lam = np.asarray(lam, float).reshape(config.N, config.n_multicast_users)
    if np.any(beta < 0) or np.any(lam < 0):
        raise ValueError("gains must be nonnegative")
    return NetworkRealization(config, np.zeros((config.N, 2)), np.zeros((config.U, 2)),
                              np.zeros((config.n_multicast_users, 2)), beta, lam)
