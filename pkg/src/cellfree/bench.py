"""Monte-Carlo experiment harness: baselines, paired runs over realizations,
summary statistics and file outputs."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .apg import SolverConfig, solve
from .chanstats import EstimationStats, compute_stats
from .netgen import NetworkConfig, NetworkRealization, generate_network, load_config_file
from .sinr import Allocation, SeReport, se_report

log = logging.getLogger(__name__)

APG_JOINT = "APG_JOINT"
OPA_RAS = "OPA_RAS"
EPA_RAS = "EPA_RAS"
SCHEMES = (APG_JOINT, OPA_RAS, EPA_RAS)


@dataclass
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    realizations: int = 100
    schemes: tuple = SCHEMES
    ras_prob: float = 0.5
    output_dir: str | None = None
    master_seed: int = 0
    workers: int = 1
    throughput: bool = False

    def __post_init__(self):
        self.schemes = tuple(self.schemes)
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        bad = set(self.schemes) - set(SCHEMES)
        if bad:
            raise ValueError(f"unknown schemes {sorted(bad)}; choose from {SCHEMES}")
        if not 0 < self.ras_prob <= 1:
            raise ValueError("ras_prob must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"]["K"] = list(self.network.K)
        d["schemes"] = list(self.schemes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        exp = dict(d.get("experiment", {}) or {})
        net = NetworkConfig.from_dict(d.get("network", {}) or {})
        sol = SolverConfig.from_dict(d.get("solver", {}) or {})
        return cls(network=net, solver=sol, **exp)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(load_config_file(path))


@dataclass
class ExperimentRecord:
    realization: int
    scheme: str
    sse_weighted: float
    sse: float
    se_uni: list
    se_multi: list
    qos_violations: int
    iterations: int
    wall_time: float
    converged: bool = True
    error: str = ""


# -- random AP selection and baselines -----------------------------------------

def random_association(N: int, E: int, prob: float, rng: np.random.Generator,
                       K_max: int | None = None) -> np.ndarray:
    """Independent Bernoulli(prob) inclusion per (AP, entity), then capped at
    ``K_max`` entities per AP and repaired so every entity has an AP."""
    K_max = E if K_max is None else K_max
    a = rng.random((N, E)) < prob
    for n in np.flatnonzero(a.sum(1) > K_max):
        on = np.flatnonzero(a[n])
        drop = rng.choice(on, size=on.size - K_max, replace=False)
        a[n, drop] = False
    for e in np.flatnonzero(~a.any(0)):
        room = np.flatnonzero(a.sum(1) < K_max)
        pool = room if room.size else np.arange(N)
        a[rng.choice(pool), e] = True
    return a.astype(float)


def equal_power(assoc: np.ndarray, stats: EstimationStats, L: int, U: int) -> Allocation:
    """Each AP splits its budget equally over the entities it serves."""
    S = assoc.sum(1, keepdims=True)
    G = np.hstack([stats.gamma, stats.zeta])
    share = np.zeros_like(assoc)
    ok = (assoc > 0) & (G > 0)
    denom = L * np.broadcast_to(S, assoc.shape) * G
    share[ok] = 1.0 / denom[ok]
    return Allocation(assoc[:, :U].copy(), assoc[:, U:].copy(), share[:, :U], share[:, U:])


def baseline_epa_ras(real: NetworkRealization, stats: EstimationStats, cfg: ExperimentConfig,
                     assoc: np.ndarray | None = None, rng=None):
    ncfg = real.config
    if assoc is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.master_seed)
        assoc = random_association(ncfg.N, ncfg.n_entities, cfg.ras_prob, rng,
                                   cfg.solver.penalty.k_max(ncfg.n_entities))
    alloc = equal_power(assoc, stats, ncfg.L, ncfg.U)
    pen = cfg.solver.penalty
    return alloc, se_report(alloc, stats, real, pen.w1, pen.w2)


def baseline_opa_ras(real: NetworkRealization, stats: EstimationStats, cfg: ExperimentConfig,
                     assoc: np.ndarray | None = None, rng=None):
    ncfg = real.config
    if assoc is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.master_seed)
        assoc = random_association(ncfg.N, ncfg.n_entities, cfg.ras_prob, rng,
                                   cfg.solver.penalty.k_max(ncfg.n_entities))
    res = solve(stats, real, cfg.solver, frozen_assoc=assoc)
    return res.allocation, res.report, res


# -- experiment loop -------------------------------------------------------------

def _seed_for(master: int, index: int, stream: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index), int(stream)]).generate_state(1)[0])


def _qos_violations(rep: SeReport, cfg: SolverConfig) -> int:
    p = cfg.penalty
    return int(np.sum(rep.se_uni < p.se_qos_uni - 1e-9) + np.sum(rep.se_multi < p.se_qos_multi - 1e-9))


def _record(i, scheme, rep, cfg, iters, t0, converged=True):
    return ExperimentRecord(i, scheme, rep.sse_weighted, rep.sse,
                            [float(v) for v in rep.se_uni], [float(v) for v in rep.se_multi],
                            _qos_violations(rep, cfg.solver), iters, time.perf_counter() - t0,
                            converged)


def run_realization(cfg: ExperimentConfig, index: int) -> list[ExperimentRecord]:
    """All schemes on realization ``index``; schemes share the network and the
    random association."""
    ncfg = cfg.network.replace(seed=cfg.master_seed)
    real = generate_network(ncfg, index)
    stats = compute_stats(real)
    ras_rng = np.random.default_rng(_seed_for(cfg.master_seed, index, 1))
    assoc = random_association(ncfg.N, ncfg.n_entities, cfg.ras_prob, ras_rng,
                               cfg.solver.penalty.k_max(ncfg.n_entities))
    solver = SolverConfig(**{**cfg.solver.__dict__, "seed": _seed_for(cfg.master_seed, index, 2)})
    run_cfg = ExperimentConfig(**{**cfg.__dict__, "solver": solver})
    out = []
    for scheme in cfg.schemes:
        t0 = time.perf_counter()
        try:
            if scheme == EPA_RAS:
                _, rep = baseline_epa_ras(real, stats, run_cfg, assoc)
                out.append(_record(index, scheme, rep, run_cfg, 0, t0))
            elif scheme == OPA_RAS:
                _, rep, res = baseline_opa_ras(real, stats, run_cfg, assoc)
                out.append(_record(index, scheme, rep, run_cfg, res.iters, t0, res.converged))
            else:
                res = solve(stats, real, solver)
                out.append(_record(index, scheme, res.report, run_cfg, res.iters, t0, res.converged))
        except Exception as exc:  # one bad realization must not abort the batch
            log.warning("realization %d scheme %s failed: %s", index, scheme, exc)
            out.append(ExperimentRecord(index, scheme, float("nan"), float("nan"), [], [], 0, 0,
                                        time.perf_counter() - t0, False, f"{type(exc).__name__}: {exc}"))
    return out


def _median_ratio(a, b):
    if not np.isfinite(a) or not np.isfinite(b) or b == 0:
        return None
    return float(a / b - 1.0)


def summarize(records: list[ExperimentRecord], cfg: ExperimentConfig) -> dict:
    per = {}
    for scheme in cfg.schemes:
        vals = np.array([r.sse_weighted for r in records if r.scheme == scheme and not r.error])
        unw = np.array([r.sse for r in records if r.scheme == scheme and not r.error])
        failed = sum(1 for r in records if r.scheme == scheme and r.error)
        per[scheme] = {
            "n": int(vals.size),
            "failed": failed,
            "median": float(np.median(vals)) if vals.size else None,
            "mean": float(np.mean(vals)) if vals.size else None,
            "std": float(np.std(vals)) if vals.size else None,
            "min": float(np.min(vals)) if vals.size else None,
            "max": float(np.max(vals)) if vals.size else None,
            "mean_unweighted": float(np.mean(unw)) if unw.size else None,
            "cdf_sse": sorted(float(v) for v in vals),
            "qos_violations_mean": float(np.mean([r.qos_violations for r in records
                                                  if r.scheme == scheme and not r.error] or [0])),
        }
        if cfg.throughput:
            bw = cfg.network.bandwidth_hz
            per[scheme]["median_throughput_bps"] = per[scheme]["median"] * bw if vals.size else None
    improvements = {}
    for ref in (EPA_RAS, OPA_RAS):
        if ref not in per or per[ref]["median"] is None:
            continue
        for s in cfg.schemes:
            if s != ref and per[s]["median"] is not None:
                improvements[f"{s}_vs_{ref}"] = _median_ratio(per[s]["median"], per[ref]["median"])
    n_fail = sum(1 for r in records if r.error)
    return {
        "config": cfg.to_dict(),
        "schemes": per,
        "median_improvement": improvements,
        "failures": n_fail,
        "flagged": n_fail > 0.1 * max(len(records), 1),
    }


def write_records_csv(records: list[ExperimentRecord], path) -> None:
    cols = ["realization", "scheme", "sse_weighted", "sse", "qos_violations", "iterations",
            "converged", "error", "se_uni", "se_multi"]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            w.writerow([r.realization, r.scheme, repr(r.sse_weighted), repr(r.sse),
                        r.qos_violations, r.iterations, int(r.converged), r.error,
                        " ".join(repr(v) for v in r.se_uni), " ".join(repr(v) for v in r.se_multi)])


def run_experiment(cfg: ExperimentConfig) -> tuple[list[ExperimentRecord], dict]:
    """Run every scheme on ``cfg.realizations`` realizations. Output files (if
    ``output_dir`` is set): ``records.csv`` and ``summary.json``; wall-clock
    data lives only under the summary's ``metadata`` key."""
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    idx = range(cfg.realizations)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(run_realization, [cfg] * len(idx), idx))
    else:
        chunks = [run_realization(cfg, i) for i in idx]
    records = sorted((r for c in chunks for r in c),
                     key=lambda r: (r.realization, cfg.schemes.index(r.scheme)))
    summary = summarize(records, cfg)
    if summary["flagged"]:
        log.warning("more than 10%% of runs failed (%d)", summary["failures"])
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records_csv(records, out / "records.csv")
        meta = {"started_utc": started, "version": __version__,
                "wall_time_s": {f"{r.realization}:{r.scheme}": r.wall_time for r in records}}
        (out / "summary.json").write_text(json.dumps({**summary, "metadata": meta}, indent=2))
    return records, summary


def run_sweep(cfg: ExperimentConfig, param: str, values, tag: str = "") -> list[dict]:
    """Repeat :func:`run_experiment` with one network parameter varied.
    Writes ``sweep.csv`` (value, scheme, mean, median, n) when ``output_dir``
    is set."""
    rows = []
    base_out = Path(cfg.output_dir) if cfg.output_dir else None
    for v in values:
        net = cfg.network.replace(**{param: v})
        sub = str(base_out / f"{param}={v}") if base_out else None
        _, summary = run_experiment(ExperimentConfig(**{**cfg.__dict__, "network": net,
                                                        "output_dir": sub}))
        for scheme, s in summary["schemes"].items():
            rows.append({"tag": tag, "param": param, "value": v, "scheme": scheme,
                         "mean_sse": s["mean"], "median_sse": s["median"], "n": s["n"],
                         "failed": s["failed"]})
    if base_out:
        base_out.mkdir(parents=True, exist_ok=True)
        with open(base_out / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return rows
