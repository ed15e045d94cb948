"""Closed-form projection onto the relaxed feasible set.

Per AP the power amplitudes must satisfy ``theta >= 0`` and
``L * ||theta_n||^2 <= 1``; the soft association indicators satisfy
``0 <= z <= 1`` and ``||z_n||^2 <= K_max``. Both blocks separate by AP.
The theta block has a closed form (clamp, then scale into the ball); the
z block is clip(r / s, 0, 1) with the smallest s >= 1 that meets the ball,
found by bisection only for rows where plain clipping is not enough.
"""

from __future__ import annotations

import numpy as np

from .penalty import SolverVars


_ULP_SLACK = 8 * np.finfo(float).eps


def _scale_rows(x: np.ndarray, radius: float) -> np.ndarray:
    norm = np.sqrt(np.einsum("...i,...i->...", x, x))
    # ties (up to rounding of a previous rescale) keep the no-scaling branch,
    # which makes the map bitwise idempotent
    over = norm > radius * (1.0 + _ULP_SLACK)
    if not np.any(over):
        return x.copy()
    factor = np.where(over, radius / np.where(over, norm, 1.0), 1.0)
    return x * factor[..., None]


def project_theta_block(r1, L: int) -> np.ndarray:
    """Euclidean projection of one AP's amplitudes (or an (N, E) array of
    them, row-wise) onto {x >= 0, L ||x||^2 <= 1}."""
    x = np.maximum(np.asarray(r1, float), 0.0)
    return _scale_rows(x, 1.0 / np.sqrt(L))


def _z_scale_clamp(x: np.ndarray, K_max: int) -> np.ndarray:
    return np.minimum(_scale_rows(x, np.sqrt(K_max)), 1.0)


def _z_exact(x: np.ndarray, K_max: int, iters: int = 200) -> np.ndarray:
    # minimizer is clip(r / s, 0, 1) for the smallest s >= 1 meeting the ball
    out = np.minimum(x, 1.0)
    sq = np.einsum("...i,...i->...", out, out)
    over = sq > K_max * (1.0 + _ULP_SLACK)
    if not np.any(over):
        return out
    rows = x[over]
    lo = np.ones(rows.shape[0])
    hi = np.maximum(np.sqrt(np.einsum("ij,ij->i", rows, rows) / K_max), 1.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        c = np.minimum(rows / mid[:, None], 1.0)
        ok = np.einsum("ij,ij->i", c, c) <= K_max
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * hi):
            break
    out[over] = np.minimum(rows / hi[:, None], 1.0)
    return out


def project_z_block(r2, K_max: int, method: str = "exact") -> np.ndarray:
    """Projection of soft association indicators onto {0 <= z <= 1, ||z||^2 <= K_max}.

    ``method="exact"`` returns the Euclidean projection; ``"scale_clamp"``
    clamps at zero, shrinks into the sqrt(K_max) ball and clamps at one, which
    is always feasible but shrinks more than needed when the box alone
    already satisfies the ball.
    """
    x = np.maximum(np.asarray(r2, float), 0.0)
    if method == "exact":
        return _z_exact(x, K_max)
    if method == "scale_clamp":
        return _z_scale_clamp(x, K_max)
    raise ValueError(f"unknown z projection method {method!r}")


def project_arrays(theta, z, L: int, K_max: int, method: str = "exact"):
    return project_theta_block(theta, L), project_z_block(z, K_max, method)


def project(vars_raw: SolverVars, L: int, K_max: int | None = None,
            method: str = "exact") -> SolverVars:
    if K_max is None:
        K_max = vars_raw.theta.shape[1]
    th, z = project_arrays(vars_raw.theta, vars_raw.z, L, K_max, method)
    return SolverVars(th, z, vars_raw.U)


def project_vector(vec: np.ndarray, N: int, E: int, L: int, K_max: int,
                   method: str = "exact") -> np.ndarray:
    """Projection of the flat stacked vector used by the solver."""
    ne = N * E
    out = np.empty_like(vec, dtype=float)
    out[:ne] = project_theta_block(vec[:ne].reshape(N, E), L).ravel()
    out[ne:] = project_z_block(vec[ne:].reshape(N, E), K_max, method).ravel()
    return out


def feasibility_violation(vars: SolverVars, L: int, K_max: int) -> float:
    """Largest violation of any constraint of the relaxed set (0 if feasible)."""
    th, z = vars.theta, vars.z
    parts = [
        np.max(-th, initial=0.0),
        np.max(L * np.sum(th ** 2, axis=1) - 1.0, initial=0.0),
        np.max(-z, initial=0.0),
        np.max(z - 1.0, initial=0.0),
        np.max(np.sum(z ** 2, axis=1) - K_max, initial=0.0),
    ]
    return float(max(parts))
