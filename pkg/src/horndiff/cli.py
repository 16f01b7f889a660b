"""Command-line entry point: parse a TOML config, dispatch experiments,
emit results and diagnostics.

Exit codes: 0 ok, 1 assumption/threshold failure, 2 usage or config error.
Seeds are explicit (file or --seed); there is deliberately no environment
fallback so every recorded run names its seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .diagnostics import LyapunovConfig, drift_check, qv_growth
from .dynamics import CovarianceSpec, ReflectionSpec, phi
from .experiments import (EXPERIMENT_NAMES, ExperimentConfig, run_experiment,
                          write_curves, write_paths_csv, write_results_csv)
from .geometry import DomainProfile, check_assumptions
from .integrator import (StepConfig, default_threads, run_ensemble,
                         write_summary_csv, write_trajectories_jsonl)

_ALLOWED = {
    "domain": {"d", "a0", "alpha_cusp", "a_inf", "beta", "x_lo", "x_hi"},
    "covariance": {"kind", "v", "axial", "transverse", "delta",
                   "sigma_sq_limit"},
    "reflection": {"s0", "c0"},
    "lyapunov": {"gamma", "x1", "theta_margin", "lag_strides",
                 "min_segments"},
    "step": {"dt_max", "eta", "r_max", "t_max", "max_reflect_iters",
             "lambda_tol", "record_stride", "record_cap", "max_steps"},
    "experiment": {"name", "n_paths", "seed", "x0", "y0_frac", "t_horizon",
                   "x_target", "r_target", "r_cut", "levels_r0", "gate"},
}


class ConfigError(Exception):
    pass


def _check_keys(table, section):
    unknown = set(table) - _ALLOWED[section]
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in [{section}]; "
            f"allowed: {sorted(_ALLOWED[section])}")


@dataclass
class RunManifest:
    config_path: str
    config: dict
    master_seed: int
    workers: int
    out_dir: str
    tool_version: str

    def hash(self):
        blob = json.dumps({"config": self.config, "seed": self.master_seed,
                           "version": self.tool_version}, sort_keys=True,
                          default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write(self):
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump({"config_path": self.config_path, "config": self.config,
                       "master_seed": self.master_seed,
                       "workers": self.workers,
                       "tool_version": self.tool_version,
                       "manifest_hash": self.hash()}, fh, indent=2,
                      default=str)
        return path


def load_config(path):
    """Parse and validate the TOML config; unknown keys are hard errors."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    unknown = set(raw) - set(_ALLOWED)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    for section in raw:
        if section in _ALLOWED:
            _check_keys(raw[section], section)
    return raw


def build_objects(raw):
    """Instantiate the model objects from the parsed config tables."""
    dom = dict(raw.get("domain", {}))
    profile = DomainProfile(**dom)
    covt = dict(raw.get("covariance", {}))
    kind = covt.pop("kind", "isotropic")
    kwargs = {"kind": kind, "d": profile.d}
    if "v" in covt:
        kwargs["v"] = covt.pop("v")
    if "axial" in covt:
        kwargs["axial"] = tuple(covt.pop("axial"))
        kwargs["v"] = None
    if "transverse" in covt:
        kwargs["transverse"] = tuple(covt.pop("transverse"))
    if "delta" in covt:
        kwargs["delta_ellipticity"] = covt.pop("delta")
    if "sigma_sq_limit" in covt:
        kwargs["sigma_sq_limit"] = covt.pop("sigma_sq_limit")
    cov = CovarianceSpec(**kwargs)
    reft = raw.get("reflection", {"s0": 1.0, "c0": 1.0})
    refl = ReflectionSpec(s0=reft.get("s0", 1.0), c0=reft.get("c0", 1.0))
    stept = dict(raw.get("step", {}))
    step = StepConfig(**stept)
    return profile, cov, refl, step


def build_experiment(raw, profile, cov, refl, step, seed_override=None,
                     threads=1):
    expt = dict(raw.get("experiment", {}))
    expt.pop("gate", None)
    name = expt.pop("name", "lln")
    seed = seed_override if seed_override is not None else expt.pop("seed", 42)
    expt.pop("seed", None)
    lyap = raw.get("lyapunov", {})
    gammas = lyap.get("gamma", [0.25, 2.0])
    if not isinstance(gammas, (list, tuple)):
        gammas = [gammas]
    return name, ExperimentConfig(
        name=name, profile=profile, covariance=cov, reflection=refl,
        step=step, seed=int(seed), gammas=tuple(gammas), threads=threads,
        **expt)


def cmd_check(args):
    """Assumption audit: domain decay conditions, ellipticity, reflection
    projection limits; prints pass/fail per assumption with the worst
    abscissa."""
    raw = load_config(args.config)
    failures = 0
    try:
        profile, cov, refl, step = build_objects(raw)
    except (ValueError, TypeError) as exc:
        print(f"FAIL construction: {exc}")
        return 1
    rep = check_assumptions(profile)
    for c in rep:
        tag = "pass" if c.passed else "FAIL"
        print(f"{tag}  {c.name}  (worst x = {c.worst_x:g}, "
              f"value = {c.worst_value:.3e}) {c.detail}")
        failures += 0 if c.passed else 1

    grid = np.geomspace(max(profile.x_hi, 1.0), 1e8, 40)
    gaps = [abs(phi(refl, profile, x, _e1(profile.d))[0] - refl.s0)
            for x in grid]
    ok = gaps[-1] < 1e-6
    print(f"{'pass' if ok else 'FAIL'}  <phi, e_x> -> s0  "
          f"(tail gap {gaps[-1]:.3e})")
    failures += 0 if ok else 1
    tgaps = [abs(-(phi(refl, profile, x, _e1(profile.d))[1]) - refl.c0)
             for x in grid]
    ok = tgaps[-1] < 1e-6
    print(f"{'pass' if ok else 'FAIL'}  <phi, -e_u> -> c0  "
          f"(tail gap {tgaps[-1]:.3e})")
    failures += 0 if ok else 1

    from .geometry import inward_normal
    normal_ok = True
    for x in np.concatenate(([0.0], grid)):
        n = (inward_normal(profile, x, _e1(profile.d)) if x > 0
             else np.eye(profile.d + 1)[0])
        p = phi(refl, profile, x, _e1(profile.d))
        if float(p @ n) <= 0:
            normal_ok = False
            worst = x
            break
    print(f"{'pass' if normal_ok else 'FAIL'}  <phi, n> > 0 on the boundary"
          + ("" if normal_ok else f" (fails at x = {worst:g})"))
    failures += 0 if normal_ok else 1

    gap = max(abs(cov.diag_entries(x)[1] * profile.d - cov.sigma_sq_limit)
              for x in grid)
    ok = gap < 1e-6
    print(f"{'pass' if ok else 'FAIL'}  transverse variance -> sigma^2  "
          f"(tail gap {gap:.3e})")
    failures += 0 if ok else 1
    return 1 if failures else 0


def _e1(d):
    e = np.zeros(d)
    e[0] = 1.0
    return e


def cmd_simulate(args):
    """Raw ensemble with trajectory recording; JSONL + summary CSV."""
    raw = load_config(args.config)
    profile, cov, refl, step = build_objects(raw)
    expt = raw.get("experiment", {})
    seed = args.seed if args.seed is not None else expt.get("seed", 42)
    n_paths = expt.get("n_paths", 10)
    x0 = expt.get("x0", 1.0)
    t_horizon = expt.get("t_horizon", step.t_max)
    step = replace(step, t_max=t_horizon,
                   record_stride=step.record_stride or 100)
    manifest = RunManifest(args.config, raw, int(seed), args.threads,
                           args.out, __version__)
    manifest.write()
    h = manifest.hash()
    from .geometry import Point
    results = run_ensemble(profile, cov, refl, step, n_paths=n_paths,
                           master_seed=int(seed),
                           z0=Point(x0, np.zeros(profile.d)),
                           threads=args.threads)
    errors = [r for r in results if r.status == "error"]
    write_trajectories_jsonl(results, profile,
                             os.path.join(args.out, "trajectories.jsonl"), h)
    write_summary_csv(results, [], os.path.join(args.out, "summary.csv"), h)
    if errors:
        print("per-path errors:")
        for r in errors:
            print(f"  path {r.path}: geometry {r.error_geometry}")
        return 1
    print(f"wrote {len(results)} paths to {args.out}")
    return 0


def cmd_experiment(args):
    """Run one named experiment and write results/paths/curves."""
    raw = load_config(args.config)
    profile, cov, refl, step = build_objects(raw)
    name = args.name or raw.get("experiment", {}).get("name")
    if name not in EXPERIMENT_NAMES:
        print(f"unknown experiment {name!r}; choose from {EXPERIMENT_NAMES}",
              file=sys.stderr)
        return 2
    _, cfg = build_experiment(raw, profile, cov, refl, step,
                              seed_override=args.seed, threads=args.threads)
    cfg.name = name
    manifest = RunManifest(args.config, raw, cfg.seed, args.threads,
                           args.out, __version__)
    manifest.write()
    h = manifest.hash()
    result = run_experiment(name, cfg)
    os.makedirs(args.out, exist_ok=True)
    write_results_csv(result, os.path.join(args.out, "results.csv"), h)
    write_paths_csv(result, os.path.join(args.out, "paths.csv"), h)
    write_curves(result, os.path.join(args.out, "curves"), h, profile=profile)
    for key, est in result.estimates.items():
        tgt = "" if est.target is None else f"  target {est.target:.6g}"
        print(f"{key}: {est.mean:.6g} +- {est.stderr:.2g}{tgt}")

    gate = raw.get("experiment", {}).get("gate")
    if gate:
        rel_tol = gate.get("rel_tol", 0.1)
        bad = []
        for key, est in result.estimates.items():
            if est.target not in (None, 0.0):
                if abs(est.mean - est.target) > rel_tol * abs(est.target):
                    bad.append(key)
        if bad:
            print(f"gate violated ({rel_tol:.0%}) for: {', '.join(bad)}")
            return 1
    return 0


def cmd_diagnose(args):
    """Run drift_check and qv_growth on a recorded ensemble; emit JSON."""
    raw = load_config(args.config)
    profile, cov, refl, step = build_objects(raw)
    expt = raw.get("experiment", {})
    lyap = raw.get("lyapunov", {})
    seed = args.seed if args.seed is not None else expt.get("seed", 42)
    n_paths = expt.get("n_paths", 50)
    t_horizon = expt.get("t_horizon", 200.0)
    if step.record_stride == 0:
        step = replace(step, record_stride=100)
    step = replace(step, t_max=t_horizon)
    manifest = RunManifest(args.config, raw, int(seed), args.threads,
                           args.out, __version__)
    manifest.write()
    from .geometry import Point
    results = run_ensemble(profile, cov, refl, step, n_paths=n_paths,
                           master_seed=int(seed),
                           z0=Point(expt.get("x0", 1.0), np.zeros(profile.d)),
                           threads=args.threads)
    records = [r.records for r in results]
    gammas = lyap.get("gamma", [0.25, 2.0])
    if not isinstance(gammas, (list, tuple)):
        gammas = [gammas]
    margin = lyap.get("theta_margin", 0.2)
    x1 = lyap.get("x1", 10.0)
    lag = lyap.get("lag_strides", 10)
    min_seg = lyap.get("min_segments", 30)
    out = []
    for gamma in gammas:
        cfg_l = LyapunovConfig(gamma=gamma, profile=profile)
        gs2 = gamma * cov.sigma_sq_limit
        s0, c0 = refl.s0, refl.c0
        theta = gs2 + margin if gamma > s0 / (2 * c0) else gs2 - margin
        rep = drift_check(records, cfg_l, theta, x1, lag_strides=lag,
                          min_segments=min_seg)
        out.append(rep.to_dict())
        print(json.dumps(rep.to_dict()))
    qv = qv_growth(records, LyapunovConfig(gamma=gammas[-1], profile=profile))
    print(json.dumps(qv.to_dict()))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "diagnostics.json"), "w") as fh:
        json.dump({"drift": out, "qv": qv.to_dict(),
                   "manifest_hash": manifest.hash()}, fh, indent=2)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="horndiff",
        description="Reflected diffusions in horn-shaped domains: "
                    "simulation, experiments, diagnostics.")
    parser.add_argument("--config", required=True, help="TOML config path")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: cpu count)")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("check")
    sub.add_parser("simulate")
    p_exp = sub.add_parser("experiment")
    p_exp.add_argument("name", nargs="?", default=None,
                       choices=list(EXPERIMENT_NAMES) + [None])
    sub.add_parser("diagnose")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.threads is None:
        args.threads = default_threads()
    if args.command is None:
        parser.print_usage()
        return 2
    handlers = {"check": cmd_check, "simulate": cmd_simulate,
                "experiment": cmd_experiment, "diagnose": cmd_diagnose}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
