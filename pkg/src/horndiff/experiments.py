"""Monte Carlo experiments reproducing the strong-law constants, passage-time
ratios, explosion statistics and the one-dimensional heuristics.

Closed-form targets are always computed from the configured parameters, never
hard-coded, so parameter sweeps stay self-consistent:

  speed of B(X_t):          s0 * sigma^2 / (2 c0)
  rate of t^{-1/(1+beta)}X: ((1+beta) d v^2 tan(alpha) / (2 a_inf))^{1/(1+beta)}
  passage ratio:            E sigma_r / B(r) -> 2 c0 / (s0 sigma^2)
  strip local-time rate:    sigma^2 / (2 c0 b)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels as _k
from .geometry import B_infinity, DomainProfile, Point, eval_B, eval_b
from .dynamics import CovarianceSpec, ReflectionSpec
from .integrator import (PassageTracker, StepConfig, make_stream,
                         run_ensemble, write_summary_csv,
                         write_trajectories_jsonl)

EXPERIMENT_NAMES = ("lln", "passage", "explosion", "strip", "exit", "ode")


@dataclass
class Estimate:
    """Point estimate with standard error; CI95 = mean +- 1.96 stderr."""

    mean: float
    stderr: float
    target: float | None = None

    @property
    def ci95(self):
        return (self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr)

    def covers_target(self):
        lo, hi = self.ci95
        return self.target is not None and lo <= self.target <= hi

    def to_dict(self):
        out = {"mean": self.mean, "stderr": self.stderr,
               "ci95_lo": self.ci95[0], "ci95_hi": self.ci95[1]}
        if self.target is not None:
            out["target"] = self.target
        return out


def estimate_from(values, target=None):
    values = np.asarray(values, dtype=float)
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(float(values.mean()), se, target)


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; hashed into every output."""

    name: str
    profile: DomainProfile
    covariance: CovarianceSpec
    reflection: ReflectionSpec
    step: StepConfig
    n_paths: int = 200
    seed: int = 42
    x0: float = 1.0
    y0_frac: float = 0.0          # start at y = y0_frac * b(x0) along e_1
    gammas: tuple = (0.25, 2.0)
    t_horizon: float | None = None
    x_target: float | None = None  # horizon from the ODE surrogate if unset
    r_target: float | None = None  # passage experiments
    r_cut: float | None = None     # explosion cutoff (tau_hat level)
    levels_r0: float = 2.0
    threads: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("need n_paths >= 2 for a confidence interval")

    def start_point(self):
        b = eval_b(self.profile, self.x0)
        y = np.zeros(self.profile.d)
        y[0] = self.y0_frac * b
        return Point(self.x0, y)

    def to_dict(self):
        return {"name": self.name, "profile": self.profile.to_dict(),
                "covariance": self.covariance.to_dict(),
                "reflection": self.reflection.to_dict(),
                "step": self.step.to_dict(), "n_paths": self.n_paths,
                "seed": self.seed, "x0": self.x0, "y0_frac": self.y0_frac,
                "gammas": list(self.gammas), "t_horizon": self.t_horizon,
                "x_target": self.x_target, "r_target": self.r_target,
                "r_cut": self.r_cut, "levels_r0": self.levels_r0}

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EnsembleResult:
    per_path: dict
    estimates: dict
    metadata: dict
    paths: list = field(default_factory=list, repr=False)

    def estimate(self, key):
        return self.estimates[key]


def speed_target(cov, refl):
    """Limit of B(X_t)/t."""
    return refl.s0 * cov.sigma_sq_limit / (2.0 * refl.c0)


def rate_target(profile, cov, refl):
    """Limit of t^{-1/(1+beta)} X_t (beta > -1) or (log X_t)/t (beta = -1)."""
    tan_a = refl.s0 / refl.c0
    d = profile.d
    v2 = cov.sigma_sq_limit / d
    base = d * v2 * tan_a / (2.0 * profile.a_inf)
    if profile.beta == -1.0:
        return base
    return ((1.0 + profile.beta) * base) ** (1.0 / (1.0 + profile.beta))


def passage_target(cov, refl):
    """Limit of E sigma_r / B(r)."""
    return 2.0 * refl.c0 / (refl.s0 * cov.sigma_sq_limit)


def horizon_for_target(cfg):
    """Time for the noise-free surrogate to reach x_target:
    t = 2 c0 (B(x_target) - B(x0)) / (s0 sigma^2)."""
    if cfg.t_horizon is not None:
        return cfg.t_horizon
    if cfg.x_target is None:
        raise ValueError("need t_horizon or x_target")
    dB = eval_B(cfg.profile, cfg.x_target) - eval_B(cfg.profile, cfg.x0)
    return dB / speed_target(cfg.covariance, cfg.reflection)


def _require_divergent(profile):
    if math.isfinite(B_infinity(profile)):
        raise ValueError(
            "this experiment needs B(infinity) = infinity (beta >= -1); "
            f"profile has beta = {profile.beta}")


def _require_finite(profile):
    if not math.isfinite(B_infinity(profile)):
        raise ValueError(
            "explosion experiments need B(infinity) < infinity (beta < -1); "
            f"profile has beta = {profile.beta}")


def exp_lln(cfg):
    """Strong-law estimates at a fixed horizon with closed-form targets."""
    _require_divergent(cfg.profile)
    T = horizon_for_target(cfg)
    step = dataclasses.replace(cfg.step, t_max=T)
    results = run_ensemble(cfg.profile, cfg.covariance, cfg.reflection, step,
                           n_paths=cfg.n_paths, master_seed=cfg.seed,
                           z0=cfg.start_point(), threads=cfg.threads)
    xT = np.array([p.x for p in results])
    tT = np.array([p.t for p in results])
    LT = np.array([p.L for p in results])
    BX = eval_B(cfg.profile, xT)
    beta = cfg.profile.beta
    s0 = cfg.reflection.s0

    est = {
        "B_X_over_t": estimate_from(BX / tT, speed_target(cfg.covariance,
                                                          cfg.reflection)),
        "s0_L_over_X": estimate_from(s0 * LT / xT, 1.0),
    }
    rt = rate_target(cfg.profile, cfg.covariance, cfg.reflection)
    if beta == -1.0:
        est["log_X_over_t"] = estimate_from(np.log(xT) / tT, rt)
    else:
        est["rate_normalized_X"] = estimate_from(
            xT / tT ** (1.0 / (1.0 + beta)), rt)
    if beta == 0.0:
        est["X_over_t"] = estimate_from(xT / tT, rt)

    per_path = {"path": np.arange(cfg.n_paths), "t": tT, "x": xT,
                "y_norm": np.array([p.y_norm for p in results]),
                "L": LT, "B_x": BX,
                "status": np.array([p.status for p in results])}
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed,
            "t_horizon": T, "n_paths": cfg.n_paths}
    return EnsembleResult(per_path, est, meta, results)


def exp_passage(cfg):
    """Passage-time ratio E sigma_r / B(r) on a geometric ladder of levels."""
    _require_divergent(cfg.profile)
    if cfg.r_target is None:
        raise ValueError("passage experiment needs r_target")
    levels = []
    r = cfg.r_target
    while r > max(4.0 * cfg.x0, cfg.levels_r0):
        levels.append(r)
        r /= 2.0
    levels = np.array(sorted(levels))
    step = dataclasses.replace(cfg.step, r_max=float(cfg.r_target),
                               t_max=math.inf)
    results = run_ensemble(cfg.profile, cfg.covariance, cfg.reflection, step,
                           n_paths=cfg.n_paths, master_seed=cfg.seed,
                           z0=cfg.start_point(), levels=levels,
                           threads=cfg.threads)
    target = passage_target(cfg.covariance, cfg.reflection)
    est = {}
    ratios = []
    for k, lev in enumerate(levels):
        hits = np.array([p.hit_times[k] for p in results])
        ratio = hits / eval_B(cfg.profile, lev)
        est[f"ratio_r_{lev:g}"] = estimate_from(ratio, target)
        ratios.append(est[f"ratio_r_{lev:g}"].mean)
    # soft monotone-convergence check over the last three ladder levels
    gaps = [abs(v - target) for v in ratios[-3:]]
    monotone = all(gaps[i + 1] <= gaps[i] + 1e-12 for i in range(len(gaps) - 1))
    per_path = {"path": np.arange(cfg.n_paths),
                "sigma_r": np.array([p.hit_times[-1] for p in results]),
                "status": np.array([p.status for p in results])}
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed,
            "levels": levels.tolist(), "monotone_convergence": monotone,
            "n_paths": cfg.n_paths}
    return EnsembleResult(per_path, est, meta, results)


def exp_explosion(cfg):
    """Explosion statistics: tau_hat = sigma_{r_cut}, doubling stability,
    and agreement across starting points (axis vs near-boundary).

    The paths run to 2 * r_cut so that the doubled-cutoff mean comes from
    the same trajectories (which it would equal anyway, by determinism of
    the per-path streams).
    """
    _require_finite(cfg.profile)
    if cfg.r_cut is None:
        raise ValueError("explosion experiment needs r_cut")
    levels = [cfg.levels_r0]
    while levels[-1] < 2.0 * cfg.r_cut:
        levels.append(min(levels[-1] * 2.0, 2.0 * cfg.r_cut))
    for must in (float(cfg.r_cut), 2.0 * cfg.r_cut):
        if must not in levels:
            levels.append(must)
    levels = np.array(sorted(set(levels)))
    k_cut = int(np.searchsorted(levels, cfg.r_cut))
    assert levels[k_cut] == cfg.r_cut
    step = dataclasses.replace(cfg.step, r_max=float(2.0 * cfg.r_cut))

    b0 = eval_b(cfg.profile, cfg.x0)
    starts = {"axis": Point(cfg.x0, np.zeros(cfg.profile.d))}
    yb = np.zeros(cfg.profile.d)
    yb[0] = b0 - 1e-3
    starts["near_boundary"] = Point(cfg.x0, yb)

    est, per_path, all_results = {}, {}, {}
    for j, (label, z0) in enumerate(starts.items()):
        results = run_ensemble(cfg.profile, cfg.covariance, cfg.reflection,
                               step, n_paths=cfg.n_paths,
                               master_seed=cfg.seed + j * (1 << 32),
                               z0=z0, levels=levels, threads=cfg.threads)
        for p in results:
            tr = PassageTracker(levels, p.hit_times)
            if p.status == "reached_level" and tr.converged():
                p.status = "exploded"
        tau = np.array([p.hit_times[k_cut] for p in results])
        tau2 = np.array([p.hit_times[-1] for p in results])
        reached = np.array([p.status in ("reached_level", "exploded")
                            for p in results])
        est[f"tau_hat_{label}"] = estimate_from(tau)
        est[f"tau_hat_doubled_{label}"] = estimate_from(tau2)
        est[f"reached_fraction_{label}"] = Estimate(float(reached.mean()), 0.0, 1.0)
        all_results[label] = results
        per_path[f"tau_{label}"] = tau
    stability = abs(est["tau_hat_doubled_axis"].mean
                    - est["tau_hat_axis"].mean) / est["tau_hat_axis"].mean

    e1, e2 = est["tau_hat_axis"], est["tau_hat_near_boundary"]
    joint_ci = 1.96 * math.hypot(e1.stderr, e2.stderr)
    start_gap_widths = (abs(e1.mean - e2.mean) / joint_ci
                        if joint_ci > 0 else math.inf)

    Binf = B_infinity(cfg.profile)
    heuristic = (2.0 * cfg.reflection.c0 * (Binf - eval_B(cfg.profile, cfg.x0))
                 / (cfg.reflection.s0 * cfg.covariance.sigma_sq_limit))
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed,
            "levels": levels.tolist(), "r_cut": cfg.r_cut,
            "stability_rel_change": float(stability),
            "start_gap_joint_ci_widths": float(start_gap_widths),
            "heuristic_tau_band": [0.75 * heuristic, 1.25 * heuristic],
            "n_paths": cfg.n_paths}
    per_path["path"] = np.arange(cfg.n_paths)
    return EnsembleResult(per_path, est, meta,
                          all_results["axis"] + all_results["near_boundary"])


def exp_strip_local_time(cfg, *, half_width=1.0, t_horizon=500.0, dt=2e-4,
                         walk_h=None):
    """1-D benchmark: reflected transverse diffusion on [-b, b].

    Estimates L_T/T against sigma^2/(2 c0 b), plus a discrete +-h random
    walk oracle extrapolated h -> 0, with joint confidence intervals.
    """
    if cfg.profile.d != 1:
        raise ValueError("the strip benchmark is one-dimensional")
    c0 = cfg.reflection.c0
    sigma2 = cfg.covariance.sigma_sq_limit
    sigma = math.sqrt(sigma2)
    target = sigma2 / (2.0 * c0 * half_width)
    n_steps = int(round(t_horizon / dt))

    sde_vals = np.empty(cfg.n_paths)
    for i in range(cfg.n_paths):
        rng = make_stream(cfg.seed, i)
        state = np.zeros(3)
        buf = np.empty(1 << 16)
        while True:
            rng.standard_normal(out=buf)
            r = _k.strip_transverse_loop(half_width, c0, sigma, dt, n_steps,
                                         buf, state)
            if r == _k.TERMINATED:
                break
        sde_vals[i] = state[1] / t_horizon

    if walk_h is None:
        walk_h = half_width / 25.0
    walk_levels = []
    for h in (walk_h, walk_h / 2.0):
        n_w = int(round(t_horizon * sigma2 / (h * h)))
        vals = np.empty(cfg.n_paths)
        for i in range(cfg.n_paths):
            rng = make_stream(cfg.seed + (1 << 33), i)
            state = np.zeros(3)
            buf = np.empty(1 << 16)
            while True:
                buf[:] = rng.random(buf.shape[0])
                r = _k.strip_walk_loop(half_width, c0, h, n_w, buf, state)
                if r == _k.TERMINATED:
                    break
            vals[i] = state[1] / t_horizon
        walk_levels.append(vals)
    # first-order Richardson extrapolation in h
    walk_extrap = 2.0 * walk_levels[1] - walk_levels[0]

    est = {
        "L_over_T": estimate_from(sde_vals, target),
        "walk_L_over_T": estimate_from(walk_extrap, target),
    }
    e1, e2 = est["L_over_T"], est["walk_L_over_T"]
    joint = 1.96 * math.hypot(e1.stderr, e2.stderr)
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed,
            "half_width": half_width, "dt": dt, "t_horizon": t_horizon,
            "walk_h": walk_h,
            "sde_walk_gap": abs(e1.mean - e2.mean),
            "sde_walk_joint_ci": joint, "n_paths": cfg.n_paths}
    per_path = {"path": np.arange(cfg.n_paths), "L_over_T": sde_vals,
                "walk_L_over_T": walk_extrap}
    return EnsembleResult(per_path, est, meta)


def exp_exit_bound(cfg, *, r=50.0, x_grid=(0.1, 1.0, 5.0, 25.0),
                   n_paths_per_cell=None):
    """Empirical uniformity proxy for E_z sigma_r over a grid of starts.

    Starts include near-boundary points (within 1e-3 of the wall); cells
    exceeding 5x the grid median are flagged.
    """
    n = n_paths_per_cell or max(cfg.n_paths // 4, 8)
    step = dataclasses.replace(cfg.step, r_max=float(r), t_max=math.inf)
    rows = []
    cell = 0
    for x0 in x_grid:
        if x0 >= r:
            continue
        b0 = eval_b(cfg.profile, x0)
        for label, frac in (("axis", 0.0), ("near_boundary", None)):
            y = np.zeros(cfg.profile.d)
            if frac is None:
                y[0] = max(b0 - 1e-3, 0.0)
            results = run_ensemble(cfg.profile, cfg.covariance,
                                   cfg.reflection, step, n_paths=n,
                                   master_seed=cfg.seed + cell * (1 << 32),
                                   z0=Point(x0, y), levels=[r],
                                   threads=cfg.threads)
            taus = np.array([p.hit_times[0] for p in results])
            errors = sum(p.status == "error" for p in results)
            rows.append({"x0": x0, "start": label,
                         "mean_sigma_r": float(taus.mean()),
                         "stderr": float(taus.std(ddof=1) / math.sqrt(n)),
                         "n_errors": errors})
            cell += 1
    med = float(np.median([r_["mean_sigma_r"] for r_ in rows]))
    for r_ in rows:
        r_["flagged"] = r_["mean_sigma_r"] > 5.0 * med
    est = {"grid_median_sigma_r": Estimate(med, 0.0)}
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "r": r,
            "rows": rows, "any_flagged": any(r_["flagged"] for r_ in rows),
            "any_errors": any(r_["n_errors"] for r_ in rows)}
    return EnsembleResult({"rows": rows}, est, meta)


def exp_ode_heuristic(cfg, *, t_horizon=None, x_cap=1e9, n_samples=400):
    """Noise-free surrogate dX/dt = s0 sigma^2 / (2 c0 b(X)) by adaptive RK.

    Emits the comparison curve B(X_t) vs (s0 sigma^2 / 2 c0) t; for finite
    B(infinity) the integration stops at x_cap and the blow-up time
    2 c0 (B(inf) - B(x0)) / (s0 sigma^2) is reported.
    """
    rate = speed_target(cfg.covariance, cfg.reflection)
    profile = cfg.profile

    def rhs(t, x):
        return rate / eval_b(profile, float(x[0]))

    def hit_cap(t, x):
        return x[0] - x_cap
    hit_cap.terminal = True
    hit_cap.direction = 1.0

    Binf = B_infinity(profile)
    if t_horizon is None:
        if math.isfinite(Binf):
            t_horizon = 1.25 * (Binf - eval_B(profile, cfg.x0)) / rate
        else:
            t_horizon = horizon_for_target(cfg)
    sol = solve_ivp(rhs, (0.0, t_horizon), [cfg.x0], rtol=1e-10, atol=1e-12,
                    dense_output=True, events=hit_cap, max_step=t_horizon / 50)
    t_end = sol.t[-1]
    ts = np.linspace(0.0, t_end, n_samples)
    xs = sol.sol(ts)[0]
    Bx = eval_B(profile, xs)
    curve = {"t": ts, "X": xs, "B_X": Bx, "rate_t": rate * ts}
    meta = {"config_hash": cfg.config_hash(), "rate": rate,
            "first_integral_residual": float(np.max(np.abs(
                Bx - rate * ts - eval_B(profile, cfg.x0)))),
            "B_infinity": Binf}
    if math.isfinite(Binf):
        meta["blowup_time"] = (Binf - eval_B(profile, cfg.x0)) / rate
        if sol.t_events[0].size:
            meta["cap_hit_time"] = float(sol.t_events[0][0])
    est = {"first_integral_residual":
           Estimate(meta["first_integral_residual"], 0.0, 0.0)}
    return EnsembleResult(curve, est, meta)


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def write_results_csv(result, path, manifest_hash=""):
    """Aggregate estimates: one row per named estimate."""
    with open(path, "w") as fh:
        fh.write("estimate,mean,stderr,ci95_lo,ci95_hi,target,config_hash,"
                 "seed,manifest_hash\n")
        h = result.metadata.get("config_hash", "")
        seed = result.metadata.get("seed", "")
        for name, e in result.estimates.items():
            lo, hi = e.ci95
            tgt = "" if e.target is None else repr(e.target)
            fh.write(f"{name},{e.mean!r},{e.stderr!r},{lo!r},{hi!r},{tgt},"
                     f"{h},{seed},{manifest_hash}\n")


def write_paths_csv(result, path, manifest_hash=""):
    """Per-path terminal values, one row per path."""
    per = result.per_path
    if "rows" in per:  # grid-style experiments
        keys = list(per["rows"][0].keys())
        with open(path, "w") as fh:
            fh.write(",".join(keys) + ",manifest_hash\n")
            for row in per["rows"]:
                fh.write(",".join(repr(row[k]) if isinstance(row[k], float)
                                  else str(row[k]) for k in keys)
                         + f",{manifest_hash}\n")
        return
    keys = [k for k, v in per.items() if isinstance(v, np.ndarray)]
    n = len(per[keys[0]])
    with open(path, "w") as fh:
        fh.write(",".join(keys) + ",manifest_hash\n")
        for i in range(n):
            vals = []
            for k in keys:
                v = per[k][i]
                vals.append(repr(float(v)) if isinstance(v, (float, np.floating))
                            else str(v))
            fh.write(",".join(vals) + f",{manifest_hash}\n")


def write_curves(result, out_dir, manifest_hash="", profile=None):
    """Plot-ready two-column series under curves/: the ODE comparison curve
    (t vs X, B(X), rate*t), the passage ratio vs level r, or the running
    ensemble estimate of B(X_t)/t when trajectory records are available."""
    per = result.per_path
    pairs = []
    if "t" in per and "X" in per:
        pairs = [("t_vs_X", per["t"], per["X"]),
                 ("t_vs_B_X", per["t"], per["B_X"]),
                 ("t_vs_rate_t", per["t"], per["rate_t"])]
    elif "levels" in result.metadata and result.estimates:
        levels = np.asarray(result.metadata["levels"], dtype=float)
        ratios = [result.estimates[f"ratio_r_{lev:g}"].mean for lev in levels
                  if f"ratio_r_{lev:g}" in result.estimates]
        if len(ratios) == len(levels):
            pairs = [("r_vs_ratio", levels, np.asarray(ratios))]
    elif result.paths and profile is not None:
        recs = [p.records for p in result.paths if p.records.shape[0] > 1]
        if recs:
            t_hi = max(r[-1, 0] for r in recs)
            bins = np.geomspace(max(min(r[1, 0] for r in recs), 1e-9), t_hi, 80)
            acc = np.zeros(bins.size)
            cnt = np.zeros(bins.size, dtype=int)
            for r in recs:
                idx = np.searchsorted(r[:, 0], bins, side="right") - 1
                ok = idx >= 0
                acc[ok] += eval_B(profile, r[idx[ok], 1]) / r[idx[ok], 0]
                cnt[ok] += 1
            sel = cnt > 0
            pairs = [("t_vs_B_X_over_t", bins[sel], acc[sel] / cnt[sel])]
    if not pairs:
        return
    os.makedirs(out_dir, exist_ok=True)
    for name, a, b in pairs:
        with open(os.path.join(out_dir, name + ".csv"), "w") as fh:
            fh.write(f"# manifest={manifest_hash}\n")
            for x, y in zip(a, b):
                fh.write(f"{float(x)!r},{float(y)!r}\n")


def run_experiment(name, cfg):
    """Dispatch by experiment name."""
    fns = {"lln": exp_lln, "passage": exp_passage, "explosion": exp_explosion,
           "strip": exp_strip_local_time, "exit": exp_exit_bound,
           "ode": exp_ode_heuristic}
    if name not in fns:
        raise KeyError(f"unknown experiment {name!r}; "
                       f"choose from {EXPERIMENT_NAMES}")
    return fns[name](cfg)
