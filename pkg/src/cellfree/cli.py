"""Command-line entry point: ``cellfree simulate | validate-oracle | sweep``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .apg import recover_power
from .bench import ExperimentConfig, run_experiment, run_sweep
from .chanstats import compute_stats
from .netgen import generate_network
from .oracle import certify
from .project import project_theta_block


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    over = {}
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    if getattr(args, "workers", None):
        over["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        over["master_seed"] = args.seed
    if getattr(args, "schemes", None):
        over["schemes"] = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
    if getattr(args, "realizations", None):
        over["realizations"] = args.realizations
    return ExperimentConfig(**{**cfg.__dict__, **over}) if over else cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    _, summary = run_experiment(cfg)
    for scheme, s in summary["schemes"].items():
        print(f"{scheme:10s} n={s['n']:4d} median SSE={s['median']:.4f} mean SSE={s['mean']:.4f}")
    for k, v in summary["median_improvement"].items():
        if v is not None:
            print(f"{k}: {100 * v:+.1f}%")
    if cfg.output_dir:
        print(f"wrote {cfg.output_dir}/records.csv and summary.json")
    return 1 if summary["flagged"] else 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [type(getattr(cfg.network, args.param))(v) for v in args.values.split(",")]
    rows = run_sweep(cfg, args.param, values)
    for r in rows:
        print(f"{r['param']}={r['value']:<6} {r['scheme']:10s} mean SSE={r['mean_sse']:.4f}")
    return 0


def cmd_validate_oracle(args) -> int:
    cfg = _load(args)
    ok = True
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for i in range(args.instances):
        net = cfg.network.replace(seed=cfg.master_seed)
        real = generate_network(net, i)
        stats = compute_stats(real)
        rng = np.random.default_rng([cfg.master_seed, i, 7])
        E = net.n_entities
        theta = project_theta_block(rng.uniform(0.0, 1.0, (net.N, E)), net.L)
        assoc = np.ones((net.N, E))
        alloc, _ = recover_power(theta[:, :net.U], theta[:, net.U:], assoc[:, :net.U],
                                 assoc[:, net.U:], stats, net.L)
        rep = certify(alloc, stats, real, args.draws, rng, args.tol)
        line = {k: v for k, v in rep.items() if k != "result"}
        print(f"instance {i}: " + json.dumps(line))
        if out:
            rep["result"].to_csv(out / f"oracle_{i}.csv", net.group_of)
        ok &= rep["unicast_ok"] and rep["multicast_ok"] and rep["power_ok"]
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellfree", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="Monte-Carlo comparison of the schemes")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--schemes", help="comma separated subset of APG_JOINT,OPA_RAS,EPA_RAS")
    s.add_argument("--realizations", type=int)
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("validate-oracle", help="closed-form vs Monte-Carlo SINR gates")
    o.add_argument("--config", required=True)
    o.add_argument("--draws", type=int, default=100000)
    o.add_argument("--instances", type=int, default=5)
    o.add_argument("--tol", type=float, default=0.03)
    o.add_argument("--out")
    o.add_argument("--seed", type=int)
    o.set_defaults(func=cmd_validate_oracle)

    w = sub.add_parser("sweep", help="vary one network parameter")
    w.add_argument("--config", required=True)
    w.add_argument("--param", required=True)
    w.add_argument("--values", required=True, help="comma separated values")
    w.add_argument("--out")
    w.add_argument("--workers", type=int)
    w.add_argument("--seed", type=int)
    w.add_argument("--schemes")
    w.add_argument("--realizations", type=int)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
