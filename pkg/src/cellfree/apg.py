"""Nonmonotone accelerated projected gradient for joint AP selection and
power control, plus rounding of the soft associations and power recovery.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from .chanstats import EstimationStats
from .netgen import NetworkRealization
from .penalty import Objective, PenaltyConfig, SolverVars
from .project import project_theta_block, project_z_block, feasibility_violation
from .sinr import Allocation, SeReport, se_report, POWER_TOL

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass
class SolverConfig:
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    zeta_nm: float = 0.5          # nonmonotonicity degree, in [0, 1)
    eps: float = 1e-5
    max_iters: int = 5000         # inner iterations per outer round
    max_outer: int = 10
    penalty_tol: float = 1e-6
    step_bar: float | None = None  # None: 1 / (2 J_hat)
    step: float | None = None
    lipschitz_samples: int = 100
    backtrack: float = 0.5
    max_backtracks: int = 40
    step_growth: float = 1.5      # step multiplier after an accepted accelerated step
    f_stop: bool = True           # also stop on the one-step weighted-SSE test
    round_threshold: float = 0.5
    z_projection: str = "exact"   # or "scale_clamp"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.zeta_nm < 1:
            raise ValueError("zeta_nm must lie in [0, 1)")
        if self.eps <= 0 or self.max_iters < 1 or self.max_outer < 1:
            raise ValueError("invalid stopping parameters")
        if self.step_growth < 1:
            raise ValueError("step_growth must be >= 1")
        for s in (self.step_bar, self.step):
            if s is not None and s <= 0:
                raise ValueError("step sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        pen_keys = set(PenaltyConfig.__dataclass_fields__)
        pen = dict(d.pop("penalty", {}) or {})
        for k in list(d):
            if k in pen_keys:
                pen[k] = d.pop(k)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown solver keys: {sorted(unknown)}")
        return cls(penalty=PenaltyConfig(**pen), **d)


# -- scalar recurrences -------------------------------------------------------

def update_q(q: float) -> float:
    return (1.0 + math.sqrt(4.0 * q * q + 1.0)) / 2.0


def update_cb(c: float, b: float, g_val: float, zeta_nm: float) -> tuple[float, float]:
    b_next = zeta_nm * b + 1.0
    return (zeta_nm * b * c + g_val) / b_next, b_next


@dataclass
class ApgState:
    x: np.ndarray          # current iterate
    x_prev: np.ndarray
    x_tilde: np.ndarray    # last accelerated candidate
    g_x: float
    f_x: float
    q_prev: float = 0.0
    q: float = 1.0
    b: float = 1.0
    c: float = 0.0
    o: int = 1
    x_bar: np.ndarray | None = None
    history: deque = field(default_factory=lambda: deque(maxlen=11))
    f_prev: float | None = None

    @classmethod
    def start(cls, x0: np.ndarray, g0: float, f0: float) -> "ApgState":
        st = cls(x0.copy(), x0.copy(), x0.copy(), g0, f0, c=g0)
        st.history.append(g0)
        return st


def extrapolate(state: ApgState) -> np.ndarray:
    x = state.x
    return (x + (state.q_prev / state.q) * (state.x_tilde - x)
            + ((state.q_prev - 1.0) / state.q) * (x - state.x_prev))


class _Problem:
    """Objective + projection + (optional) frozen associations for one solve."""

    def __init__(self, stats, real, cfg: SolverConfig, frozen=None):
        ncfg = real.config
        self.obj = Objective(stats, real, cfg.penalty)
        self.N, self.E, self.U = ncfg.N, ncfg.n_entities, ncfg.U
        self.L = ncfg.L
        self.K_max = cfg.penalty.k_max(self.E)
        self.ne = self.N * self.E
        self.frozen = None if frozen is None else np.asarray(frozen, float)
        self.z_method = cfg.z_projection
        self.n_evals = 0

    def project(self, vec):
        ne = self.ne
        th = vec[:ne].reshape(self.N, self.E)
        out = np.empty(2 * ne)
        if self.frozen is None:
            out[:ne] = project_theta_block(th, self.L).ravel()
            out[ne:] = project_z_block(vec[ne:].reshape(self.N, self.E), self.K_max,
                                           self.z_method).ravel()
        else:
            out[:ne] = project_theta_block(th * self.frozen, self.L).ravel()
            out[ne:] = self.frozen.ravel()
        return out

    def value(self, vec):
        self.n_evals += 1
        return self.obj.value(vec)

    def value_and_grad(self, vec):
        self.n_evals += 1
        g, gr = self.obj.value_and_grad(vec)
        if self.frozen is not None:
            gr[self.ne:] = 0.0
        return g, gr

    def weighted_sse(self, vec):
        return self.obj.weighted_sse(vec)

    def random_point(self, rng):
        th = rng.uniform(0.0, 1.0 / math.sqrt(self.L), size=(self.N, self.E))
        z = rng.uniform(0.0, 1.0, size=(self.N, self.E))
        return self.project(np.concatenate([th.ravel(), z.ravel()]))

    def lipschitz_estimate(self, rng, samples: int) -> float:
        """Largest observed gradient difference quotient over random feasible
        pairs; half the pairs are far apart, half are local perturbations."""
        J = 0.0
        for i in range(samples):
            v = self.random_point(rng)
            if i % 2 == 0:
                w = self.random_point(rng)
            else:
                w = self.project(v + 1e-3 * rng.standard_normal(v.size))
            dist = np.linalg.norm(v - w)
            if dist == 0:
                continue
            J = max(J, np.linalg.norm(self.value_and_grad(v)[1] - self.value_and_grad(w)[1]) / dist)
        return J if J > 0 else 1.0


def _check_finite(g, grad, trace):
    if not math.isfinite(g) or (grad is not None and not np.all(np.isfinite(grad))):
        raise SolverError("non-finite objective or gradient", trace)


def apg_iterate(state: ApgState, prob: _Problem, steps: dict, zeta_nm: float, trace=None) -> dict:
    """One iteration of the nonmonotone APG; mutates ``state`` and returns the
    trace record of the step."""
    x_bar = extrapolate(state)
    state.x_bar = x_bar
    g_bar, grad_bar = prob.value_and_grad(x_bar)
    _check_finite(g_bar, grad_bar, trace)
    x_t = prob.project(x_bar - steps["bar"] * grad_bar)
    g_t = prob.value(x_t)
    _check_finite(g_t, None, trace)
    d2 = float(np.sum((x_t - x_bar) ** 2))
    threshold = state.c - zeta_nm * d2
    rec = {"c": state.c, "g_tilde": g_t, "dist2": d2}
    if g_t <= threshold:
        x_new, g_new, kind = x_t, g_t, "accelerated"
        grow = steps.get("growth", 1.0)
        steps["bar"] *= grow
        steps["plain"] *= grow
    else:
        g_x, grad_x = prob.value_and_grad(state.x)
        _check_finite(g_x, grad_x, trace)
        alpha = steps["plain"]
        x_h, g_h = state.x, g_x
        for _ in range(steps.get("max_backtracks", 40)):
            cand = prob.project(state.x - alpha * grad_x)
            g_c = prob.value(cand)
            if math.isfinite(g_c) and g_c <= g_x:
                x_h, g_h = cand, g_c
                break
            alpha *= steps.get("backtrack", 0.5)
        steps["plain"] = alpha
        # a step that fails to descend from the iterate is too long for the
        # extrapolated point as well
        steps["bar"] = min(steps["bar"], alpha)
        if g_t <= g_h:
            x_new, g_new = x_t, g_t
        else:
            x_new, g_new = x_h, g_h
        kind = "corrected"
    state.x_prev, state.x, state.x_tilde = state.x, x_new, x_t
    state.g_x = g_new
    state.f_prev, state.f_x = state.f_x, prob.weighted_sse(x_new)
    state.q_prev, state.q = state.q, update_q(state.q)
    state.c, state.b = update_cb(state.c, state.b, g_new, zeta_nm)
    state.o += 1
    state.history.append(g_new)
    rec.update({"g": g_new, "f": state.f_x, "kind": kind})
    return rec


def _stop_values(state: ApgState) -> tuple[float, float]:
    h = state.history
    g_now = h[-1]
    sg = abs(g_now - h[0]) / abs(g_now) if len(h) == h.maxlen and g_now != 0 else math.inf
    # both tests share the warm-up of the 10-step window
    if state.f_prev is None or state.f_x == 0 or len(h) < h.maxlen:
        sf = math.inf
    else:
        sf = abs(state.f_x - state.f_prev) / abs(state.f_x)
    return sg, sf


# -- rounding and power recovery ----------------------------------------------

def round_association(vars: SolverVars, threshold: float = 0.5, K_max: int | None = None):
    """Binary associations from soft indicators: ``a = 1`` iff ``z^2 >= threshold``;
    APs over the ``K_max`` cap keep their largest ``z``; entities left uncovered
    get their largest-``z`` AP (lowest index on ties)."""
    z = vars.z
    N, E = z.shape
    K_max = E if K_max is None else K_max
    a = (z ** 2 >= threshold)
    for n in np.flatnonzero(a.sum(1) > K_max):
        keep = np.argsort(-z[n], kind="stable")[:K_max]
        a[n] = False
        a[n, keep] = True
    for e in np.flatnonzero(~a.any(0)):
        room = a.sum(1) < K_max
        cand = np.where(room, z[:, e], -np.inf) if room.any() else z[:, e]
        a[int(np.argmax(cand)), e] = True
    a = a.astype(float)
    return a[:, :vars.U], a[:, vars.U:]


@dataclass
class RecoveryInfo:
    degenerate_links: list
    rescaled_aps: list


def recover_power(theta, theta_bar, a, a_bar, stats: EstimationStats, L: int):
    """Power coefficients eta = theta^2/gamma (theta_bar^2/zeta for groups) on
    associated links; APs above the budget are rescaled onto it."""
    a = np.asarray(a, float)
    a_bar = np.asarray(a_bar, float)
    eta = np.zeros_like(a)
    eta_bar = np.zeros_like(a_bar)
    ok_u = (a == 1) & (stats.gamma > 0)
    ok_m = (a_bar == 1) & (stats.zeta > 0)
    eta[ok_u] = theta[ok_u] ** 2 / stats.gamma[ok_u]
    eta_bar[ok_m] = theta_bar[ok_m] ** 2 / stats.zeta[ok_m]
    degenerate = ([("unicast", int(n), int(u)) for n, u in zip(*np.nonzero((a == 1) & ~ok_u))]
                  + [("multicast", int(n), int(m)) for n, m in zip(*np.nonzero((a_bar == 1) & ~ok_m))])
    alloc = Allocation(a, a_bar, eta, eta_bar)
    load = alloc.per_ap_load(stats, L)
    over = np.flatnonzero(load > 1.0)
    for n in over:
        eta[n] /= load[n]
        eta_bar[n] /= load[n]
    return alloc, RecoveryInfo(degenerate, [int(n) for n in over])


# -- driver ----------------------------------------------------------------------

@dataclass
class SolveResult:
    allocation: Allocation
    report: SeReport
    converged: bool
    qos_infeasible: bool
    outer_rounds: int
    iters: int
    trace: list
    feasibility: dict
    vars: SolverVars
    steps: list = field(default_factory=list)
    recovery: RecoveryInfo | None = None

    def trace_to_csv(self, path) -> None:
        keys = ["outer", "iter", "X", "g", "f", "bracket", "kind", "c", "g_tilde",
                "dist2", "stop_g", "stop_f"]
        with open(Path(path), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
            w.writeheader()
            for r in self.trace:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def initial_point(prob: _Problem, rng: np.random.Generator) -> np.ndarray:
    th = rng.uniform(0.0, 1.0 / math.sqrt(prob.L), size=(prob.N, prob.E))
    z = np.ones((prob.N, prob.E))
    return prob.project(np.concatenate([th.ravel(), z.ravel()]))


def solve(stats: EstimationStats, real: NetworkRealization, cfg: SolverConfig | None = None,
          frozen_assoc=None, x0=None) -> SolveResult:
    """Run the penalty-continuation APG.

    ``frozen_assoc`` (an ``(N, U+M)`` 0/1 array) switches to power-only
    optimization over a fixed association: ``z`` is held at the association,
    its gradient is dropped and amplitudes of unassociated links stay zero.
    """
    cfg = cfg or SolverConfig()
    ncfg = real.config
    prob = _Problem(stats, real, cfg, frozen_assoc)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x5EED]))
    x = prob.project(np.asarray(x0, float)) if x0 is not None else initial_point(prob, rng)

    X = float(cfg.penalty.X)
    trace: list = []
    steps_used = []
    total_iters = 0
    converged = False
    rounds = 0
    for outer in range(cfg.max_outer):
        rounds = outer + 1
        prob.obj.X = X
        if cfg.step_bar is None or cfg.step is None:
            J = prob.lipschitz_estimate(rng, cfg.lipschitz_samples)
        else:
            J = float("nan")
        steps = {"bar": cfg.step_bar or 1.0 / (2.0 * J),
                 "plain": cfg.step or 1.0 / (2.0 * J),
                 "backtrack": cfg.backtrack, "max_backtracks": cfg.max_backtracks,
                 "growth": cfg.step_growth}
        steps_used.append({"outer": outer, "X": X, "J_hat": J,
                           "step_bar": steps["bar"], "step": steps["plain"]})
        g0 = prob.value(x)
        _check_finite(g0, None, trace)
        state = ApgState.start(x, g0, prob.weighted_sse(x))
        for it in range(cfg.max_iters):
            rec = apg_iterate(state, prob, steps, cfg.zeta_nm, trace)
            sg, sf = _stop_values(state)
            rec.update({"outer": outer, "iter": it, "X": X,
                        "bracket": (rec["g"] + rec["f"]) / X, "stop_g": sg, "stop_f": sf})
            trace.append(rec)
            total_iters += 1
            if sg <= cfg.eps or (cfg.f_stop and sf <= cfg.eps):
                break
        x = state.x
        bracket = prob.obj.terms(x)["bracket"]
        log.debug("outer %d: X=%.3g iters=%d bracket=%.3g", outer, X, it + 1, bracket)
        if bracket < cfg.penalty_tol:
            converged = True
            break
        X *= cfg.penalty.varsigma

    N, E, U = prob.N, prob.E, prob.U
    theta = x[:N * E].reshape(N, E)
    z = x[N * E:].reshape(N, E)
    soft = SolverVars(theta.copy(), z.copy(), U)
    if frozen_assoc is None:
        a, a_bar = round_association(soft, cfg.round_threshold, prob.K_max)
    else:
        fa = np.asarray(frozen_assoc, float)
        a, a_bar = fa[:, :U], fa[:, U:]
    alloc, info = recover_power(theta[:, :U], theta[:, U:], a, a_bar, stats, ncfg.L)
    rep = se_report(alloc, stats, real, cfg.penalty.w1, cfg.penalty.w2)
    load = alloc.per_ap_load(stats, ncfg.L)
    qos_slack_u = rep.se_uni - cfg.penalty.se_qos_uni
    qos_slack_m = rep.se_multi - cfg.penalty.se_qos_multi
    feas = {
        "power_slack": 1.0 - load,
        "qos_slack_uni": qos_slack_u,
        "qos_slack_multi": qos_slack_m,
        "soft_violation": feasibility_violation(soft, ncfg.L, prob.K_max),
        "uncovered": int(np.sum(np.hstack([a, a_bar]).sum(0) == 0)),
    }
    qos_bad = bool(np.any(qos_slack_u < -1e-9) or np.any(qos_slack_m < -1e-9))
    if np.any(load > 1 + POWER_TOL):
        raise SolverError("recovered allocation violates the per-AP power budget", trace)
    return SolveResult(alloc, rep, converged, qos_bad, rounds, total_iters, trace, feas,
                       soft, steps_used, info)
