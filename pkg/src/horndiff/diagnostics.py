"""Lyapunov-function evaluators and statistical drift / quadratic-variation
checks on simulated ensembles.

The scalar diagnostic is g(x, y) = x + gamma * ||y||^2 / bt(x), where bt is
the profile smoothed near the origin: constant b(1) on [0, 1/2], a C^2
quintic blend on [1/2, 1], and b itself on (1, inf).  kappa = g(Z) and its
linearization B(kappa) carry the drift structure that the verdict tests
probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import phi, sigma_sqrt
from .geometry import eval_B, eval_b, eval_b_derivs, _quintic_hermite


@dataclass
class LyapunovConfig:
    """gamma and the smoothed profile bt backing g and its derivatives."""

    gamma: float
    profile: object
    _q: np.ndarray = field(init=False, repr=False)
    b1: float = field(init=False)

    def __post_init__(self):
        p = self.profile
        self.b1 = float(eval_b(p, 1.0))
        bp1, bpp1 = eval_b_derivs(p, 1.0)
        # quintic on s in [0,1], s = 2x - 1 on [1/2, 1]; constant at left end
        self._q = _quintic_hermite(self.b1, 0.0, 0.0,
                                   self.b1, 0.5 * bp1, 0.25 * bpp1)
        lo = self.b_tilde(np.linspace(0.0, 1.0, 201)).min()
        if lo < self.b1 / 2.0:
            raise ValueError("smoothed profile dips below b(1)/2 on [0, 1]")

    def b_tilde(self, x):
        """Smoothed profile: positive, C^2, equal to b on (1, inf)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.empty_like(x)
        left = x <= 0.5
        mid = (x > 0.5) & (x < 1.0)
        right = x >= 1.0
        out[left] = self.b1
        if np.any(mid):
            s = 2.0 * x[mid] - 1.0
            q = self._q
            out[mid] = q[0] + s * (q[1] + s * (q[2] + s * (q[3] + s * (q[4] + s * q[5]))))
        if np.any(right):
            out[right] = eval_b(self.profile, x[right])
        return float(out[0]) if scalar else out

    def b_tilde_derivs(self, x):
        """(bt'(x), bt''(x))."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        d1 = np.zeros_like(x)
        d2 = np.zeros_like(x)
        mid = (x > 0.5) & (x < 1.0)
        right = x >= 1.0
        if np.any(mid):
            s = 2.0 * x[mid] - 1.0
            q = self._q
            d1[mid] = 2.0 * (q[1] + s * (2 * q[2] + s * (3 * q[3] + s * (4 * q[4] + s * 5 * q[5]))))
            d2[mid] = 4.0 * (2 * q[2] + s * (6 * q[3] + s * (12 * q[4] + s * 20 * q[5])))
        if np.any(right):
            bp, bpp = eval_b_derivs(self.profile, x[right])
            d1[right] = bp
            d2[right] = bpp
        if scalar:
            return float(d1[0]), float(d2[0])
        return d1, d2


def g_eval(cfg, z):
    """g(z) = x + gamma ||y||^2 / bt(x)."""
    return float(z.x) + cfg.gamma * z.y_norm ** 2 / cfg.b_tilde(float(z.x))


def g_eval_xy(cfg, x, rho):
    """Vectorized g over arrays of (x, ||y||)."""
    return np.asarray(x, dtype=float) + cfg.gamma * np.asarray(rho) ** 2 / cfg.b_tilde(x)


def grad_g(cfg, z):
    """(d+1)-gradient of g."""
    x = float(z.x)
    bt = cfg.b_tilde(x)
    btp, _ = cfg.b_tilde_derivs(x)
    gx = 1.0 - cfg.gamma * btp / bt ** 2 * z.y_norm ** 2
    gy = 2.0 * cfg.gamma * z.y / bt
    return np.concatenate(([gx], gy))


def hessian_g(cfg, z):
    """(d+1)x(d+1) Hessian of g."""
    x = float(z.x)
    d = z.y.shape[0]
    bt = cfg.b_tilde(x)
    btp, btpp = cfg.b_tilde_derivs(x)
    H = np.zeros((d + 1, d + 1))
    rho2 = z.y_norm ** 2
    H[0, 0] = cfg.gamma * (2.0 * btp ** 2 / bt ** 3 - btpp / bt ** 2) * rho2
    for i in range(d):
        H[0, 1 + i] = H[1 + i, 0] = -2.0 * cfg.gamma * btp / bt ** 2 * z.y[i]
        H[1 + i, 1 + i] = 2.0 * cfg.gamma / bt
    return H


def delta_sigma_g(cfg, cov, z):
    """Sigma-Laplacian trace[H_g(z) Sigma(z)]."""
    H = hessian_g(cfg, z)
    S = cov.matrix(z)
    return float(np.trace(H @ S))


def nu_eval(cfg, refl, x, u):
    """<phi, grad g> at the boundary point (x, u*b(x))."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    from .geometry import Point
    b = eval_b(cfg.profile, float(x))
    z = Point(float(x), u * b)
    return float(phi(refl, cfg.profile, float(x), u) @ grad_g(cfg, z))


def mu_eval(cfg, cov, z):
    """Drift rate of B(g(Z)):
    1/2 [ bt(g) * Delta_Sigma g + bt'(g) * ||Sigma^1/2 grad g||^2 ]."""
    g = g_eval(cfg, z)
    dg = delta_sigma_g(cfg, cov, z)
    root = sigma_sqrt(cov, z)
    v = root @ grad_g(cfg, z)
    btp, _ = cfg.b_tilde_derivs(g)
    return 0.5 * (cfg.b_tilde(g) * dg + btp * float(v @ v))


# ---------------------------------------------------------------------------
# statistical checks on recorded ensembles
# ---------------------------------------------------------------------------

SUPERMARTINGALE = "consistent-with-supermartingale"
SUBMARTINGALE = "consistent-with-submartingale"
INCONCLUSIVE = "inconclusive"


@dataclass
class DriftReport:
    gamma: float
    theta: float
    verdict: str
    mean_increment: float
    stderr: float
    n_segments: int

    def to_dict(self):
        return {"gamma": self.gamma, "theta": self.theta,
                "verdict": self.verdict,
                "mean_increment": self.mean_increment,
                "stderr": self.stderr, "n_segments": self.n_segments}


def _kappa_series(cfg, rec):
    """(t, B(kappa)) arrays from one path's records (t, x, ||y||, L)."""
    t = rec[:, 0]
    kappa = g_eval_xy(cfg, rec[:, 1], rec[:, 2])
    return t, eval_B(cfg.profile, kappa), kappa


def drift_check(records_list, cfg, theta, x1, lag_strides=10,
                min_segments=30, shuffle_signs=None):
    """One-sided 3-sigma drift verdict for B(kappa_t) - theta * t.

    Uses non-overlapping fixed-lag increments restricted to excursion
    segments on which kappa stays >= x1 throughout the lag window.
    shuffle_signs (a Generator) is a destroyed-drift control used by tests.
    """
    incs = []
    for rec in records_list:
        if rec.shape[0] < lag_strides + 1:
            continue
        t, Bk, kappa = _kappa_series(cfg, rec)
        i = 0
        n = rec.shape[0]
        while i + lag_strides < n:
            window = kappa[i:i + lag_strides + 1]
            if np.all(window >= x1):
                incs.append((Bk[i + lag_strides] - Bk[i])
                            - theta * (t[i + lag_strides] - t[i]))
                i += lag_strides
            else:
                i += 1
    n_seg = len(incs)
    if n_seg < min_segments:
        return DriftReport(cfg.gamma, theta, INCONCLUSIVE, math.nan,
                           math.nan, n_seg)
    incs = np.asarray(incs)
    if shuffle_signs is not None:
        incs = incs * shuffle_signs.choice([-1.0, 1.0], size=incs.shape)
    mean = float(incs.mean())
    se = float(incs.std(ddof=1) / math.sqrt(n_seg))
    if mean < 0.0 and abs(mean) > 3.0 * se:
        verdict = SUPERMARTINGALE
    elif mean > 0.0 and mean > 3.0 * se:
        verdict = SUBMARTINGALE
    else:
        verdict = INCONCLUSIVE
    return DriftReport(cfg.gamma, theta, verdict, mean, se, n_seg)


@dataclass
class QvReport:
    qv_exponent: float
    fit_range: tuple
    times: np.ndarray
    mean_qv: np.ndarray

    def to_dict(self):
        return {"qv_exponent": self.qv_exponent,
                "fit_range": list(self.fit_range)}


def qv_growth(records_list, cfg, n_bins=60):
    """Fitted log-log growth exponent of the realized QV of B(kappa).

    Realized QV accumulates squared record-to-record increments; the slope
    is least squares over the last decade of time.
    """
    t_max = max(rec[-1, 0] for rec in records_list if rec.shape[0] > 1)
    t_min = min(rec[1, 0] for rec in records_list if rec.shape[0] > 1)
    bins = np.geomspace(max(t_min, 1e-9), t_max, n_bins)
    acc = np.zeros(n_bins)
    cnt = np.zeros(n_bins, dtype=int)
    for rec in records_list:
        if rec.shape[0] < 2:
            continue
        t, Bk, _ = _kappa_series(cfg, rec)
        qv = np.concatenate(([0.0], np.cumsum(np.diff(Bk) ** 2)))
        idx = np.searchsorted(t, bins, side="right") - 1
        valid = idx >= 0
        acc[valid] += qv[idx[valid]]
        cnt[valid] += 1
    ok = cnt > 0
    times = bins[ok]
    mean_qv = acc[ok] / cnt[ok]
    pos = mean_qv > 0
    times, mean_qv = times[pos], mean_qv[pos]
    if times.size < 3:
        return QvReport(0.0, (math.nan, math.nan), times, mean_qv)
    lo = times[-1] / 10.0
    sel = times >= lo
    if sel.sum() < 3:
        sel = np.ones_like(times, dtype=bool)
    slope = np.polyfit(np.log(times[sel]), np.log(mean_qv[sel]), 1)[0]
    return QvReport(float(slope), (float(times[sel][0]), float(times[-1])),
                    times, mean_qv)


def qv_bound_ratio(records_list, cfg):
    """Per-path ratio of realized QV of B(kappa) to int b(g(Z))^2 ds.

    The bound says QV <= C * integral; the ratios should be bounded by a
    stable constant across paths.
    """
    ratios = []
    for rec in records_list:
        if rec.shape[0] < 3:
            continue
        t, Bk, kappa = _kappa_series(cfg, rec)
        qv = float(np.sum(np.diff(Bk) ** 2))
        integ = float(np.sum(eval_b(cfg.profile, kappa[:-1]) ** 2 * np.diff(t)))
        if integ > 0:
            ratios.append(qv / integ)
    return np.asarray(ratios)
