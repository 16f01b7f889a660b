"""Euler-Maruyama advancement of reflected paths with local-time accounting.

Each path owns a counter-based RNG stream: numpy Philox4x64 keyed by
(master_seed, path_index) with a fresh counter, consumed as a sequence of
standard normals, (d+1) per proposal.  Trajectories are therefore bit
reproducible for a given (master_seed, path_index, config) regardless of how
paths are scheduled across workers.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k
from .geometry import Point, eval_B, eval_b

STATUS_NAMES = {
    _k.STATUS_RUNNING: "running",
    _k.STATUS_REACHED_RMAX: "reached_level",
    _k.STATUS_TIME_BUDGET: "time_budget",
    _k.STATUS_ERROR_REFLECT: "error",
    _k.STATUS_ERROR_STEPS: "error",
}

_BUF_STEPS = 1 << 15  # proposals per RNG refill block


def make_stream(master_seed, path_index):
    """Philox4x64 stream keyed by (master_seed, path_index)."""
    key = np.array([master_seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class StepConfig:
    """Step-size, termination and reflection-resolution controls.

    dt = min(dt_max, eta * (b(x)/s_max)^2) keeps the per-step transverse
    displacement at a fixed fraction (sqrt(eta)) of the local half-width.
    """

    dt_max: float = 1e-3
    eta: float = 0.01
    r_max: float = 1e6
    t_max: float = math.inf
    max_reflect_iters: int = 64
    lambda_tol: float = 1e-12
    record_stride: int = 0
    max_steps: int = 1 << 40
    tol_boundary_rel: float = 1e-12
    zero_noise: bool = False
    record_cap: int = 8192

    def __post_init__(self):
        for name in ("dt_max", "eta", "r_max", "max_reflect_iters",
                     "lambda_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def kernel_params(self):
        return np.array([self.dt_max, self.eta, self.t_max, self.lambda_tol,
                         self.r_max, self.tol_boundary_rel])

    def to_dict(self):
        return {"dt_max": self.dt_max, "eta": self.eta, "r_max": self.r_max,
                "t_max": self.t_max, "max_reflect_iters": self.max_reflect_iters,
                "lambda_tol": self.lambda_tol,
                "record_stride": self.record_stride,
                "record_cap": self.record_cap}


@dataclass
class PathState:
    """Mutable per-path state: time, position, local time, RNG stream."""

    z: Point
    t: float = 0.0
    L: float = 0.0
    steps: int = 0
    rng: np.random.Generator | None = None
    status: str = "running"
    cusp_steps: int = 0
    reflect_events: int = 0

    @classmethod
    def start(cls, z0, master_seed, path_index):
        return cls(z=Point(z0.x, z0.y.copy()),
                   rng=make_stream(master_seed, path_index))


@dataclass
class PassageTracker:
    """Level passage times sigma_r for an ascending ladder of levels."""

    levels: np.ndarray
    hit_times: np.ndarray = field(default=None)

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        if self.levels.size and np.any(np.diff(self.levels) <= 0):
            raise ValueError("levels must be strictly ascending")
        if self.hit_times is None:
            self.hit_times = np.full(self.levels.shape, np.nan)

    @property
    def tau_E_estimate(self):
        """Hit time of the top level, if reached."""
        if self.hit_times.size and np.isfinite(self.hit_times[-1]):
            return float(self.hit_times[-1])
        return None

    def increments(self):
        return np.diff(self.hit_times)

    def converged(self, frac=0.05):
        """Last two level increments sum below frac of the top hit time."""
        tau = self.tau_E_estimate
        if tau is None or self.hit_times.size < 3:
            return False
        inc = self.increments()
        return bool(np.nansum(inc[-2:]) < frac * tau)


@dataclass
class PathResult:
    """Terminal summary plus sampled records of one path."""

    path: int
    status: str
    t: float
    x: float
    y: np.ndarray
    L: float
    steps: int
    cusp_steps: int
    reflect_events: int
    hit_times: np.ndarray
    records: np.ndarray
    error_geometry: tuple | None = None

    @property
    def y_norm(self):
        return float(np.linalg.norm(self.y))


def adaptive_dt(config, profile, cov, z):
    """dt = min(dt_max, eta * (b(x)/s_max)^2)."""
    b = eval_b(profile, float(z.x))
    return min(config.dt_max, config.eta * (b / cov.s_max) ** 2)


def propose_step(state, cov, dt, xi=None):
    """Unconstrained Euler proposal z* = z + sqrt(dt) * Sigma^1/2(z) * xi."""
    d = state.z.y.shape[0]
    if xi is None:
        xi = state.rng.standard_normal(d + 1)
    xi = np.asarray(xi, dtype=float)
    sx, st = cov.diag_entries(float(state.z.x))
    sq = math.sqrt(dt)
    xn = state.z.x + sq * math.sqrt(sx) * xi[0]
    yn = state.z.y + sq * math.sqrt(st) * xi[1:]
    return Point(xn, yn)


def resolve_reflection(profile, reflection, z_from, z_star, config):
    """Oblique push-back of an exterior proposal along phi at the nearest
    boundary foot; returns (interior point, local-time increment).

    Raises RuntimeError with the offending geometry if the iteration budget
    is exhausted (the path must abort, never silently clamp).
    """
    rho = z_star.y_norm
    xs, rs, dL, ok = _k.resolve_reflection_plane(
        profile._params, reflection.s0, reflection.c0,
        float(z_star.x), rho, config.lambda_tol, config.max_reflect_iters,
        config.tol_boundary_rel)
    if not ok:
        raise RuntimeError(
            f"reflection iteration budget exhausted at proposal "
            f"(x={z_star.x:.6g}, |y|={rho:.6g}) from (x={z_from.x:.6g})")
    if rho > 0.0:
        y = z_star.y * (rs / rho)
    else:
        y = np.zeros(profile.d)
        y[0] = rs
    return Point(xs, y), float(dL)


def _run_kernel_path(profile, cov, refl, config, z0, rng, path_index, levels,
                     t0=0.0, L0=0.0):
    d = profile.d
    P = profile._params
    C = cov.kernel_params()
    SP = config.kernel_params()
    SF = np.zeros(d + 5)
    SF[0] = t0
    SF[1] = z0.x
    SF[2:2 + d] = z0.y
    SF[2 + d] = L0
    SI = np.zeros(8, dtype=np.int64)
    levels = np.asarray(levels, dtype=float)
    hits = np.full(levels.shape, np.nan)
    rec_cap = config.record_cap if config.record_stride > 0 else 1
    records = np.empty((rec_cap, 4))
    buf = np.empty(_BUF_STEPS * (d + 1))
    if config.zero_noise:
        buf[:] = 0.0
    else:
        rng.standard_normal(out=buf)

    while True:
        res = _k.step_loop(P, d, C, refl.s0, refl.c0, SP,
                           config.max_reflect_iters, config.record_stride,
                           config.max_steps, levels, hits, SF, SI, records,
                           buf)
        if res == _k.TERMINATED:
            break
        SI[4] = 0
        if config.zero_noise:
            buf[:] = 0.0
        else:
            rng.standard_normal(out=buf)

    status_code = int(SI[1])
    err = None
    if status_code in (_k.STATUS_ERROR_REFLECT, _k.STATUS_ERROR_STEPS):
        err = (float(SF[3 + d]), float(SF[4 + d]))
    return PathResult(
        path=path_index,
        status=STATUS_NAMES[status_code],
        t=float(SF[0]),
        x=float(SF[1]),
        y=SF[2:2 + d].copy(),
        L=float(SF[2 + d]),
        steps=int(SI[0]),
        cusp_steps=int(SI[5]),
        reflect_events=int(SI[6]),
        hit_times=hits,
        records=records[:int(SI[3])].copy(),
        error_geometry=err,
    )


def advance_path(state, profile, cov, refl, config, tracker=None):
    """Advance one path until level r_max, the time budget, or an error.

    Resumes from the PathState's clock/position and consumes its RNG stream.
    Returns a PathResult and updates state/tracker in place.
    """
    levels = tracker.levels if tracker is not None else np.empty(0)
    res = _run_kernel_path(profile, cov, refl, config, state.z, state.rng,
                           0, levels, t0=state.t, L0=state.L)
    state.z = Point(res.x, res.y)
    state.t = res.t
    state.L = res.L
    state.steps += res.steps
    state.status = res.status
    state.cusp_steps += res.cusp_steps
    state.reflect_events += res.reflect_events
    if tracker is not None:
        tracker.hit_times = res.hit_times
    return res


_WORKER_CTX = {}


def _worker_init(profile, cov, refl, config, z0x, z0y, master_seed, levels):
    _WORKER_CTX["args"] = (profile, cov, refl, config, Point(z0x, z0y),
                           master_seed, levels)


def _worker_run(indices):
    profile, cov, refl, config, z0, master_seed, levels = _WORKER_CTX["args"]
    return [_run_kernel_path(profile, cov, refl, config, z0,
                             make_stream(master_seed, i), i, levels)
            for i in indices]


def run_ensemble(profile, cov, refl, config, *, n_paths, master_seed, z0,
                 levels=(), threads=1):
    """Simulate n_paths independent paths from z0; deterministic in
    (master_seed, path_index, config) regardless of thread count.

    Results are returned in path-index order.
    """
    levels = np.asarray(levels, dtype=float)
    if threads is None or threads < 1:
        threads = 1
    if threads == 1 or n_paths == 1:
        return [_run_kernel_path(profile, cov, refl, config, z0,
                                 make_stream(master_seed, i), i, levels)
                for i in range(n_paths)]
    # warm the JIT cache in the parent so forked workers inherit compiled code
    warm_cfg = replace(config, t_max=0.0, record_stride=0)
    _run_kernel_path(profile, cov, refl, warm_cfg, z0,
                     make_stream(master_seed, 0), 0, levels)
    chunks = [list(range(i, n_paths, threads)) for i in range(threads)]
    with ProcessPoolExecutor(
            max_workers=threads, initializer=_worker_init,
            initargs=(profile, cov, refl, config, z0.x, z0.y, master_seed,
                      levels)) as ex:
        parts = list(ex.map(_worker_run, chunks))
    out = [None] * n_paths
    for part in parts:
        for res in part:
            out[res.path] = res
    return out


def explosion_probe(profile, cov, refl, config, *, r0, master_seed=0,
                    path_index=0, z0=None, conv_frac=0.05):
    """Single-path probe of the level ladder r_k = r0 * 2^k up to r_max.

    Returns (tracker, PathResult); tracker.converged() flags geometric
    collapse of the passage-time increments, the operational explosion
    signature.
    """
    if z0 is None:
        z0 = Point(1.0, np.zeros(profile.d))
    levels = []
    r = float(r0)
    while r < config.r_max:
        levels.append(r)
        r *= 2.0
    if not levels or levels[-1] < config.r_max:
        levels.append(config.r_max)
    tracker = PassageTracker(np.asarray(levels))
    res = _run_kernel_path(profile, cov, refl, config, z0,
                           make_stream(master_seed, path_index), path_index,
                           tracker.levels)
    tracker.hit_times = res.hit_times
    if res.status == "reached_level" and tracker.converged(conv_frac):
        res.status = "exploded"
    return tracker, res


def write_trajectories_jsonl(results, profile, path, manifest_hash=""):
    """One JSON record per sampled instant: {path, t, x, y_norm, L, B_x}."""
    with open(path, "w") as fh:
        if manifest_hash:
            fh.write(json.dumps({"manifest": manifest_hash}) + "\n")
        for res in results:
            for row in res.records:
                rec = {"path": res.path, "t": row[0], "x": row[1],
                       "y_norm": row[2], "L": row[3],
                       "B_x": eval_B(profile, row[1])}
                fh.write(json.dumps(rec) + "\n")


def write_summary_csv(results, levels, path, manifest_hash=""):
    """Per-path terminal rows: status, tau_hat, sigma_r per level."""
    levels = np.asarray(levels, dtype=float)
    cols = ["path", "status", "t", "x", "y_norm", "L", "steps",
            "cusp_steps", "reflect_events", "tau_hat"]
    cols += [f"sigma_{lev:g}" for lev in levels]
    if manifest_hash:
        cols.append("manifest_hash")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for res in results:
            tau = res.hit_times[-1] if res.hit_times.size else math.nan
            row = [str(res.path), res.status, repr(res.t), repr(res.x),
                   repr(res.y_norm), repr(res.L), str(res.steps),
                   str(res.cusp_steps), str(res.reflect_events), repr(float(tau))]
            row += [repr(float(h)) for h in res.hit_times]
            if manifest_hash:
                row.append(manifest_hash)
            fh.write(",".join(row) + "\n")


def default_threads():
    env = os.environ.get("HORNDIFF_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)
