"""Acceptance suite: the quantitative exit criteria, one test per criterion.

Monte Carlo criteria run the frozen configs under configs/ (seed 42, d = 1,
v = 1, s0 = c0 = 1, a_inf = 1, x0 = 1); deterministic criteria run in
seconds.  Each test prints one PASS/FAIL line (visible with pytest -s).

The heavy ensembles are session fixtures shared across criteria; expect the
full module to take on the order of 10-20 minutes on two cores.
"""

import math
import os
from pathlib import Path

import numpy as np
import pytest

from horndiff.cli import build_experiment, build_objects, load_config, main
from horndiff.diagnostics import (SUBMARTINGALE, SUPERMARTINGALE,
                                  LyapunovConfig, delta_sigma_g, drift_check,
                                  g_eval, grad_g, hessian_g, mu_eval, nu_eval,
                                  qv_growth)
from horndiff.dynamics import CovarianceSpec, ReflectionSpec
from horndiff.experiments import (exp_explosion, exp_lln, exp_passage,
                                  exp_strip_local_time)
from horndiff.geometry import (DomainProfile, Point, eval_B, eval_b,
                               squared_distance)
from horndiff.integrator import default_threads

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _experiment_config(name):
    raw = load_config(str(CONFIG_DIR / name))
    profile, cov, refl, step = build_objects(raw)
    _, cfg = build_experiment(raw, profile, cov, refl, step,
                              threads=default_threads())
    return raw, cfg


def _report(num, label, ok, detail):
    print(f"[criterion {num:>2}] {'PASS' if ok else 'FAIL'}  {label}: {detail}")
    assert ok, f"criterion {num} ({label}): {detail}"


# ------------------------------------------------------- shared ensembles

@pytest.fixture(scope="session")
def strip_run():
    raw, cfg = _experiment_config("strip_lln.toml")
    return raw, cfg, exp_lln(cfg)


@pytest.fixture(scope="session")
def strip_records(strip_run):
    _, _, res = strip_run
    return [p.records for p in res.paths]


# ------------------------------------------------------------- criteria

def test_criterion_1_strip_speed(strip_run):
    _, _, res = strip_run
    e = res.estimates["X_over_t"]
    ok_band = abs(e.mean - 0.5) <= 0.1 * 0.5
    ok_ci = e.covers_target()
    _report(1, "strip speed X_T/T",
            ok_band and ok_ci,
            f"mean {e.mean:.5f}, CI [{e.ci95[0]:.5f}, {e.ci95[1]:.5f}], "
            f"target 0.5")


def test_criterion_2_superdiffusive_rate():
    _, cfg = _experiment_config("superdiffusive_lln.toml")
    res = exp_lln(cfg)
    e = res.estimates["rate_normalized_X"]
    ok = abs(e.mean - e.target) <= 0.1 * e.target
    _report(2, "t^(-2/3) X_T rate",
            ok, f"mean {e.mean:.5f}, target {e.target:.5f} "
                f"({(e.mean - e.target) / e.target:+.2%})")


def test_criterion_3_exponential_rate():
    _, cfg = _experiment_config("exponential_lln.toml")
    res = exp_lln(cfg)
    e = res.estimates["log_X_over_t"]
    ok = abs(e.mean - 0.5) <= 0.1 * 0.5
    _report(3, "(log X_T)/T rate",
            ok, f"mean {e.mean:.5f}, target 0.5 "
                f"({(e.mean - 0.5) / 0.5:+.2%})")


def test_criterion_4_passage_ratio():
    _, cfg = _experiment_config("strip_passage.toml")
    res = exp_passage(cfg)
    e = res.estimates["ratio_r_500"]
    ok = abs(e.mean - 2.0) <= 0.1 * 2.0
    _report(4, "E sigma_r / B(r) at r = 500",
            ok, f"mean {e.mean:.4f}, target 2 "
                f"({(e.mean - 2.0) / 2.0:+.2%})")


def test_criterion_5_local_time_law(strip_run):
    _, _, res = strip_run
    e = res.estimates["s0_L_over_X"]
    ok = abs(e.mean - 1.0) <= 0.05
    _report(5, "s0 L_T / X_T", ok,
            f"mean {e.mean:.5f}, target 1 ({e.mean - 1.0:+.4f})")


def test_criterion_6_explosion():
    _, cfg = _experiment_config("explosion.toml")
    res = exp_explosion(cfg)
    reached = (res.estimates["reached_fraction_axis"].mean == 1.0
               and res.estimates["reached_fraction_near_boundary"].mean == 1.0)
    stability = res.metadata["stability_rel_change"]
    gap = res.metadata["start_gap_joint_ci_widths"]
    ok = reached and stability < 0.02 and gap < 3.0
    _report(6, "explosive passage times (beta = -2)", ok,
            f"all reached: {reached}, doubling change {stability:.2%} (< 2%), "
            f"start gap {gap:.2f} joint CI widths (< 3), "
            f"tau_hat {res.estimates['tau_hat_axis'].mean:.3f} "
            f"(heuristic band {res.metadata['heuristic_tau_band'][0]:.2f}.."
            f"{res.metadata['heuristic_tau_band'][1]:.2f})")


def test_criterion_7_strip_local_time_rate():
    raw, cfg = _experiment_config("strip_local_time.toml")
    res = exp_strip_local_time(cfg, half_width=1.0, t_horizon=500.0,
                               dt=raw["step"]["dt_max"])
    e = res.estimates["L_over_T"]
    ok_band = abs(e.mean - 0.5) <= 0.05 * 0.5
    gap = res.metadata["sde_walk_gap"]
    joint = res.metadata["sde_walk_joint_ci"]
    ok = ok_band and gap <= joint
    _report(7, "1-D local-time rate", ok,
            f"mean {e.mean:.5f}, target 0.5, walk oracle gap {gap:.5f} "
            f"(joint CI {joint:.5f})")


def test_criterion_8_deterministic_lyapunov_suite():
    cov = CovarianceSpec(kind="isotropic", d=1, v=1.0, delta_ellipticity=0.5)
    refl = ReflectionSpec(s0=1.0, c0=1.0)
    profiles = {"strip": DomainProfile(d=1, beta=0.0),
                "sqrt": DomainProfile(d=1, beta=0.5)}
    rng = np.random.default_rng(8)
    # relative error with an absolute floor of 1: vanishing entries are
    # dominated by finite-difference roundoff, not by the analytics
    worst_fd = 0.0
    for prof in profiles.values():
        lc = LyapunovConfig(gamma=1.3, profile=prof)
        for _ in range(50):
            x = float(rng.uniform(1.5, 40.0))
            y = np.array([rng.uniform(-0.7, 0.7) * eval_b(prof, x)])
            z = Point(x, y)
            h = 1e-5
            for i, an in enumerate(grad_g(lc, z)):
                if i == 0:
                    f = lambda v: g_eval(lc, Point(v, z.y))
                    base = z.x
                else:
                    f = lambda v: g_eval(lc, Point(z.x, np.array([v])))
                    base = z.y[0]
                d1 = (f(base + h) - f(base - h)) / (2 * h)
                d2 = (f(base + h / 2) - f(base - h / 2)) / h
                fd = (4 * d2 - d1) / 3
                rel = abs(an - fd) / max(abs(fd), 1.0)
                worst_fd = max(worst_fd, rel)
            H = hessian_g(lc, z)
            for i in range(2):
                for j in range(2):
                    def gj(v):
                        if i == 0:
                            return grad_g(lc, Point(v, z.y))[j]
                        return grad_g(lc, Point(z.x, np.array([v])))[j]
                    base = z.x if i == 0 else z.y[0]
                    d1 = (gj(base + h) - gj(base - h)) / (2 * h)
                    d2 = (gj(base + h / 2) - gj(base - h / 2)) / h
                    fd = (4 * d2 - d1) / 3
                    rel = abs(H[i, j] - fd) / max(abs(fd), 1.0)
                    worst_fd = max(worst_fd, rel)
    ok_fd = worst_fd < 1e-6

    # sign dichotomy of nu for gamma in {0.25, 2}; threshold reported
    thresholds = {}
    ok_nu = True
    for label, prof in profiles.items():
        for gamma, sign in ((0.25, +1.0), (2.0, -1.0)):
            lc = LyapunovConfig(gamma=gamma, profile=prof)
            grid = np.geomspace(1.5, 1e6, 200)
            vals = sign * np.array([nu_eval(lc, refl, float(x), [1.0])
                                    for x in grid])
            holds = vals >= 0.0
            if not holds[-1]:
                ok_nu = False
                continue
            first = len(holds) - int(np.argmin(holds[::-1]))
            x1 = 0.0 if holds.all() else float(grid[first])
            thresholds[(label, gamma)] = x1
            ok_nu = ok_nu and x1 <= 5.0

    # asymptotic drift constants at x = 1e6
    ok_limits = True
    lims = []
    for prof in profiles.values():
        for gamma in (0.25, 2.0):
            lc = LyapunovConfig(gamma=gamma, profile=prof)
            x = 1e6
            b = eval_b(prof, x)
            z = Point(x, [0.5 * b])
            tgt = gamma * cov.sigma_sq_limit
            half_b_dsg = 0.5 * b * delta_sigma_g(lc, cov, z)
            mu = mu_eval(lc, cov, z)
            lims.append((abs(half_b_dsg - tgt) / tgt, abs(mu - tgt) / tgt))
            ok_limits = (ok_limits and lims[-1][0] < 0.01
                         and lims[-1][1] < 0.02)
    ok = ok_fd and ok_nu and ok_limits
    _report(8, "deterministic Lyapunov suite", ok,
            f"worst FD rel err {worst_fd:.2e} (< 1e-6), nu thresholds "
            f"{ {k: round(v, 2) for k, v in thresholds.items()} }, worst "
            f"drift gaps {max(l[0] for l in lims):.4f}/"
            f"{max(l[1] for l in lims):.4f} (< 0.01/0.02)")


def test_criterion_9_drift_verdicts(strip_run, strip_records):
    raw, cfg, _ = strip_run
    lyap = raw["lyapunov"]
    sigma_sq = cfg.covariance.sigma_sq_limit
    x1 = lyap["x1"]
    lag = lyap["lag_strides"]
    reports = {}
    for gamma, want in ((2.0, SUPERMARTINGALE), (0.25, SUBMARTINGALE)):
        lc = LyapunovConfig(gamma=gamma, profile=cfg.profile)
        margin = lyap["theta_margin"]
        theta = gamma * sigma_sq + (margin if gamma > 0.5 else -margin)
        rep = drift_check(strip_records, lc, theta, x1, lag_strides=lag)
        reports[gamma] = (rep, want)
    ok = all(rep.verdict == want for rep, want in reports.values())
    detail = "; ".join(
        f"gamma={g}: {rep.verdict} (mean {rep.mean_increment:+.3f}, "
        f"{abs(rep.mean_increment) / rep.stderr:.0f} sigma, "
        f"n={rep.n_segments})" for g, (rep, want) in reports.items())
    _report(9, "drift verdicts", ok, detail)


def test_criterion_10_qv_growth(strip_run, strip_records):
    _, cfg, _ = strip_run
    lc = LyapunovConfig(gamma=2.0, profile=cfg.profile)
    rep = qv_growth(strip_records, lc)
    ok = rep.qv_exponent <= 1.3
    _report(10, "QV growth exponent", ok,
            f"fitted exponent {rep.qv_exponent:.3f} over t in "
            f"[{rep.fit_range[0]:.0f}, {rep.fit_range[1]:.0f}] (<= 1.3)")


def test_criterion_11_geometry_oracles(tmp_path):
    # squared distance vs dense boundary sampling
    prof = DomainProfile(d=1, beta=0.5)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        x = float(rng.uniform(0.2, 30.0))
        rho = float(rng.uniform(0.0, 1.0)) * eval_b(prof, x)
        z = Point(x, [rho])
        guess = abs(eval_b(prof, x) - rho) + 1e-6
        xs = np.linspace(max(0.0, x - 6 * guess - 1.0), x + 6 * guess + 1.0,
                         400_000)
        bs = eval_b(prof, xs)
        oracle = float(np.min((x - xs) ** 2 + (rho - bs) ** 2))
        worst = max(worst, abs(squared_distance(prof, z) - oracle))
    ok_dist = worst < 1e-6

    # eval_B vs independent refining Simpson quadrature
    strip = DomainProfile(d=1, beta=0.0)

    def simpson(f, a, b, n):
        xg = np.linspace(a, b, n + 1)
        yg = f(xg)
        h = (b - a) / n
        return h / 3 * (yg[0] + yg[-1] + 4 * yg[1:-1:2].sum()
                        + 2 * yg[2:-1:2].sum())

    f = lambda u: eval_b(strip, u)
    n, prev = 64, None
    val = simpson(f, 0.5, 3.0, 64)
    for _ in range(12):
        n *= 2
        cur = simpson(f, 0.5, 3.0, n)
        if prev is not None and abs(cur - prev) < 1e-12:
            break
        prev, val = cur, cur
    oracle_B = strip.a0 * 0.5 ** 1.5 / 1.5 + val
    ok_B = abs(eval_B(strip, 3.0) - oracle_B) < 1e-10

    # byte-identical repeated seeded runs through the CLI
    cfgp = tmp_path / "det.toml"
    cfgp.write_text((CONFIG_DIR / "strip_lln.toml").read_text()
                    .replace("t_horizon = 2000.0", "t_horizon = 2.0")
                    .replace("n_paths = 200", "n_paths = 4")
                    .replace("eta = 5e-5", "eta = 0.01")
                    .replace("record_stride = 10000", "record_stride = 100"))
    blobs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        rc = main(["--config", str(cfgp), "--threads", "2",
                   "--out", str(out), "simulate"])
        assert rc == 0
        blobs.append((out / "trajectories.jsonl").read_bytes()
                     + (out / "summary.csv").read_bytes())
    ok_det = blobs[0] == blobs[1]

    ok = ok_dist and ok_B and ok_det
    _report(11, "geometry oracles and determinism", ok,
            f"worst distance gap {worst:.2e} (< 1e-6), B gap "
            f"{abs(eval_B(strip, 3.0) - oracle_B):.2e} (< 1e-10), "
            f"byte-identical reruns: {ok_det}")
