"""Command-line driver: ``statecc rates|simulate|check``.

Exit codes: 0 success, 2 configuration error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analytics
from .analytics import AsymmetricChannelError, CalibrationError, RateMemoryPoint, build_frontier
from .channel import ChannelError, DiscreteStateChannel, FadingModel, validate_symmetry
from .config import ConfigError, ExperimentConfig, channel_label, load_config
from .core import SchemeParams, default_eps, derive_params, enumerate_subsets
from .delivery import run_delivery, write_transcript
from .placement import FileLibrary, build_caches, split_files

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION = 0, 2, 3
REPORT_SCHEMA = 1
POINT_HEADER = ("scheme", "policy", "t", "M_over_D", "R", "rho", "stderr")
KKT_TOL = 1e-8


def _fmt(x: float) -> str:
    return repr(float(x))


def _solution_key(scheme: str) -> str:
    return "min" if scheme == "blockwise" else "sum"


class _PowerCache:
    """One waterfilling calibration per (mode, policy, t); ergodic reuses state-adaptive."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._store: dict = {}

    def get(self, scheme: str, policy: str, t: int):
        if not isinstance(self.cfg.channel, FadingModel):
            return None
        key = (_solution_key(scheme), policy, t)
        if key not in self._store:
            self._store[key] = analytics.calibrate_lambda(
                self.cfg.channel, t, self.cfg.samples, scheme=scheme, policy=policy, seed=self.cfg.seed
            )
        return self._store[key]


# -- rates --------------------------------------------------------------------


def compute_points(cfg: ExperimentConfig) -> list[RateMemoryPoint]:
    cache = _PowerCache(cfg)
    pts = []
    for scheme in sorted(cfg.schemes):
        for policy in sorted(cfg.policies):
            for t in cfg.t_values:
                pts.append(analytics.rate_point(cfg.channel, t, scheme, policy, power=cache.get(scheme, policy, t)))
    return pts


def cmd_rates(cfg: ExperimentConfig, out: Path) -> int:
    pts = compute_points(cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINT_HEADER)
        for p in pts:
            w.writerow((p.scheme, p.policy, p.t, _fmt(p.M_over_D), _fmt(p.R), _fmt(p.rho), _fmt(p.stderr)))
    with open(out / "frontier.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINT_HEADER)
        groups: dict = {}
        for p in pts:
            groups.setdefault((p.scheme, p.policy), []).append(p)
        for (scheme, policy), group in groups.items():
            fr = build_frontier(group)
            by_xy = {(p.M_over_D, p.R): p for p in group}
            for x, r in fr.vertices:
                p = by_xy[(x, r)]
                w.writerow((scheme, policy, p.t, _fmt(x), _fmt(r), _fmt(p.rho), _fmt(p.stderr)))
            x_end, r_end = fr.vertices[-1]
            # slope-1 extension: one extra row, one unit of M/D further, empty t
            w.writerow((scheme, policy, "", _fmt(x_end + 1.0), _fmt(fr.rate_at(x_end + 1.0)), _fmt(by_xy[(x_end, r_end)].rho), ""))
    for p in pts:
        print(f"{p.scheme:15s} {p.policy:14s} t={p.t}  M/D={p.M_over_D:.4f}  R={p.R:.4f} (se {p.stderr:.1e})")
    print(f"wrote {out / 'points.csv'} and {out / 'frontier.csv'}")
    return EXIT_OK


# -- simulate -----------------------------------------------------------------


def _light(power):
    # drop the Monte Carlo sample before shipping to worker processes
    if power is None:
        return None
    return dataclasses.replace(power, gains=None, members=[], slot_power=[])


def _run_one(job):
    scheme, policy, channel, params, demands, seed, power, trial = job
    library = FileLibrary.random(params.D, params.nR_bits, seed)
    report, transcript = run_delivery(scheme, policy, channel, params, demands, seed,
                                      power=power, trial=trial, library=library)
    report.credited = None
    return report, transcript


def _ci(values: list[float]) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    half = 1.96 * float(v.std(ddof=1)) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    return mean, mean - half, mean + half


def cmd_simulate(cfg: ExperimentConfig, out: Path, workers: int | None = None) -> int:
    cache = _PowerCache(cfg)
    jobs, keys = [], []
    params_of = {}
    for scheme in sorted(cfg.schemes):
        for policy in sorted(cfg.policies):
            for t in cfg.t_values:
                power = cache.get(scheme, policy, t)
                eps = default_eps(cfg.K, t) if cfg.eps is None else cfg.eps
                params = derive_params(cfg.K, t, cfg.D, cfg.T_s, cfg.B, eps, cfg.channel, scheme=scheme,
                                       policy=policy, margin=cfg.margin, power=power, seed=cfg.seed)
                params_of[scheme, policy, t] = params
                for trial in range(cfg.trials):
                    for demands in cfg.demands:
                        keys.append((scheme, policy, t, trial, demands))
                        jobs.append((scheme, policy, cfg.channel, params, demands, cfg.seed, _light(power), trial))
    n_workers = workers if workers is not None else min(len(jobs), os.cpu_count() or 1)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    out.mkdir(parents=True, exist_ok=True)
    if cfg.transcript:
        write_transcript(out / "transcript.csv", [tr for _, tr in results])

    runs = []
    for (scheme, policy, t, trial, demands), (rep, _) in zip(keys, results):
        runs.append({
            "scheme": scheme, "policy": policy, "t": t, "trial": trial, "demands": list(demands),
            "L_bit": rep.L_bit, "rho": rep.rho, "all_decoded": rep.all_decoded,
            "slots": rep.slots, "slots_decoded": rep.slots_decoded,
            "offered_rate": rep.offered_rate, "useful_rate": rep.useful_rate,
            "max_residual_fraction": float(np.max(rep.residual_fraction)),
        })
    summary = []
    ok = True
    for (scheme, policy, t), params in params_of.items():
        mine = [r for r in runs if (r["scheme"], r["policy"], r["t"]) == (scheme, policy, t)]
        # worst case over demand vectors, per trial
        per_trial = [max(r["rho"] for r in mine if r["trial"] == i) for i in range(cfg.trials)]
        rho, lo, hi = _ci(per_trial)
        decoded = all(r["all_decoded"] for r in mine)
        ok &= decoded
        summary.append({
            "scheme": scheme, "policy": policy, "t": t,
            "R": params.R, "M_over_D": params.M / params.D, "eps": params.eps,
            "nR_bits": params.nR_bits, "discarded_bits": params.discarded_bits,
            "rho": rho, "rho_ci95": [lo, hi],
            "L_bit": max(r["L_bit"] for r in mine),
            "all_decoded": decoded,
            "max_residual_fraction": max(r["max_residual_fraction"] for r in mine),
            "offered_rate": float(np.mean([r["offered_rate"] for r in mine])),
            "useful_rate": float(np.mean([r["useful_rate"] for r in mine])),
        })
        print(f"{scheme:15s} {policy:14s} t={t}  rho={rho:.4f} [{lo:.4f}, {hi:.4f}]  "
              f"decoded={'yes' if decoded else 'NO'}  residual<={summary[-1]['max_residual_fraction']:.4f}")
    doc = {
        "schema_version": REPORT_SCHEMA,
        "generator": f"statecc {__version__}",
        "channel": channel_label(cfg.channel),
        "seed": cfg.seed, "trials": cfg.trials, "T_s": cfg.T_s, "B": cfg.B, "D": cfg.D, "margin": cfg.margin,
        "summary": summary,
        "runs": runs,
    }
    with open(out / "report.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'report.json'}" + (f" and {out / 'transcript.csv'}" if cfg.transcript else ""))
    return EXIT_OK if ok else EXIT_VALIDATION


# -- check --------------------------------------------------------------------


def check_placement(K: int, t: int, D: int = 2, bits_per_queue: int = 8) -> list[str]:
    """Cache membership and size identities on a small instance; returns failures."""
    C = math.comb(K, t)
    params = SchemeParams(K=K, t=t, D=D, R=1.0, M=0.0, T_s=C * bits_per_queue, B=1, nR_bits=C * bits_per_queue)
    library = FileLibrary.random(D, params.nR_bits, 0)
    store = split_files(library, params)
    caches = build_caches(store, params)
    problems = []
    for cache in caches:
        k = cache.k
        for s in enumerate_subsets(K, t):
            for d in range(1, D + 1):
                if ((d, s.rank) in cache) != (k in s):
                    problems.append(f"receiver {k} queue {(d, s.members)} membership wrong")
        if cache.total_bits != params.cached_bits:
            problems.append(f"receiver {k} stores {cache.total_bits} bits, expected {params.cached_bits}")
    for d in range(1, D + 1):
        joined = np.concatenate([store.bits(d, s.rank) for s in store.subsets])
        if not np.array_equal(joined, library.file(d)):
            problems.append(f"queues of file {d} do not reassemble the file")
    return problems


def cmd_check(cfg: ExperimentConfig, out: Path) -> int:
    results = []
    ch = cfg.channel
    if isinstance(ch, DiscreteStateChannel):
        rep = validate_symmetry(ch)
        results.append({"check": "symmetry", "ok": rep.ok,
                        "witness": list(rep.witness) if rep.witness else None})
    for t in cfg.t_values:
        problems = check_placement(cfg.K, t, cfg.D)
        results.append({"check": "placement", "t": t, "ok": not problems, "problems": problems})
    if isinstance(ch, FadingModel):
        cache = _PowerCache(cfg)
        for scheme in sorted({_solution_key(s) for s in cfg.schemes}):
            name = "blockwise" if scheme == "min" else "state-adaptive"
            for policy in sorted(cfg.policies):
                for t in cfg.t_values:
                    sol = cache.get(name, policy, t)
                    residual = analytics.kkt_residual(sol)
                    results.append({
                        "check": "kkt", "mode": scheme, "policy": policy, "t": t, "lam": sol.lam,
                        "mean_power": sol.mean_power, "kkt_residual": residual, "ok": residual <= KKT_TOL,
                    })
    ok = all(r["ok"] for r in results)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "check.json", "w") as fh:
        json.dump({"schema_version": REPORT_SCHEMA, "ok": ok, "results": results}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in results:
        detail = {k: v for k, v in r.items() if k not in ("check", "ok", "problems")}
        print(f"{'PASS' if r['ok'] else 'FAIL'}  {r['check']:9s} {detail}")
        for p in r.get("problems", []):
            print(f"      {p}")
    return EXIT_OK if ok else EXIT_VALIDATION


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="statecc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("rates", "rate-memory points and frontiers (CSV)"),
                       ("simulate", "finite-length delivery runs (transcript CSV + report JSON)"),
                       ("check", "symmetry, placement and waterfilling checks")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="YAML config file or bundled name (fig1, two_state, asymmetric)")
        p.add_argument("--seed", type=int, help="root seed (u64), overrides the config")
        p.add_argument("--out", help="output directory, overrides the config")
        p.add_argument("--samples", type=int, help="Monte Carlo samples for fading expectations")
        p.add_argument("--trials", type=int, help="independent trials per scenario (simulate)")
        if name == "simulate":
            p.add_argument("--workers", type=int, help="worker processes (default: one per CPU)")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.samples is not None:
        if args.samples < 2:
            raise ConfigError("--samples must be at least 2")
        cfg.samples = args.samples
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        cfg.trials = args.trials
    if args.out is not None:
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except (ConfigError, ChannelError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        if args.command == "rates":
            return cmd_rates(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.workers)
        return cmd_check(cfg, out)
    except AsymmetricChannelError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CalibrationError as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
