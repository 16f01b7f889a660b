"""Horn-shaped domain geometry.

The domain is ``{(x, y) : x >= 0, ||y|| <= b(x)}`` with a boundary profile
that is an exact power ``a0 * x**alpha_cusp`` near the origin, an exact power
``a_inf * x**beta`` in the tail, and a C^2 quintic-Hermite blend of ``log b``
on ``[x_lo, x_hi]`` in between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k

_GL5_NODES = np.array([-0.9061798459386640, -0.5384693101056831, 0.0,
                       0.5384693101056831, 0.9061798459386640])
_GL5_WEIGHTS = np.array([0.2369268850561891, 0.4786286704993665,
                         0.5688888888888889, 0.4786286704993665,
                         0.2369268850561891])
_BLEND_BINS = 256


def _quintic_hermite(v0, d0, e0, v1, d1, e1):
    """Coefficients of the quintic p(s) on [0,1] with prescribed value,
    first and second derivative at both ends."""
    A = v1 - v0 - d0 - 0.5 * e0
    B = d1 - d0 - e0
    C = e1 - e0
    c3 = 10.0 * A - 4.0 * B + 0.5 * C
    c4 = -15.0 * A + 7.0 * B - C
    c5 = 6.0 * A - 3.0 * B + 0.5 * C
    return np.array([v0, d0, 0.5 * e0, c3, c4, c5])


@dataclass
class DomainProfile:
    """Boundary profile: cusp power, power-law tail, C^2 blend between.

    d is the transverse dimension (ambient dimension d + 1).
    """

    d: int = 1
    a0: float = 1.0
    alpha_cusp: float = 0.5
    a_inf: float = 1.0
    beta: float = 0.0
    x_lo: float = 0.5
    x_hi: float = 2.0
    tol_boundary_rel: float = 1e-12
    _params: np.ndarray = field(init=False, repr=False)
    _blend_nodes: np.ndarray = field(init=False, repr=False)
    _blend_cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("transverse dimension d must be >= 1")
        if self.a0 <= 0 or self.a_inf <= 0:
            raise ValueError("amplitudes a0, a_inf must be positive")
        if not (0.0 < self.alpha_cusp <= 0.5):
            raise ValueError("cusp exponent must lie in (0, 1/2]")
        if not (0.0 < self.x_lo < self.x_hi):
            raise ValueError("blend interval requires 0 < x_lo < x_hi")
        w = self.x_hi - self.x_lo
        v0 = math.log(self.a0) + self.alpha_cusp * math.log(self.x_lo)
        d0 = w * self.alpha_cusp / self.x_lo
        e0 = -w * w * self.alpha_cusp / (self.x_lo * self.x_lo)
        v1 = math.log(self.a_inf) + self.beta * math.log(self.x_hi)
        d1 = w * self.beta / self.x_hi
        e1 = -w * w * self.beta / (self.x_hi * self.x_hi)
        q = _quintic_hermite(v0, d0, e0, v1, d1, e1)
        self._params = np.array([
            self.a0, self.alpha_cusp, self.a_inf, self.beta,
            self.x_lo, self.x_hi, q[0], q[1], q[2], q[3], q[4], q[5],
            1.0 / w,
        ])
        self._init_blend_table()

    def _init_blend_table(self):
        """Cumulative Gauss-Legendre integrals of b over the blend bins."""
        nodes = np.linspace(self.x_lo, self.x_hi, _BLEND_BINS + 1)
        cum = np.empty(_BLEND_BINS + 1)
        cum[0] = 0.0
        for i in range(_BLEND_BINS):
            lo, hi = nodes[i], nodes[i + 1]
            mid = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            xs = mid + half * _GL5_NODES
            vals = np.array([_k.b_val(self._params, float(x)) for x in xs])
            cum[i + 1] = cum[i] + half * float(_GL5_WEIGHTS @ vals)
        self._blend_nodes = nodes
        self._blend_cum = cum

    # -- serialization ----------------------------------------------------
    def to_dict(self):
        return {"d": self.d, "a0": self.a0, "alpha_cusp": self.alpha_cusp,
                "a_inf": self.a_inf, "beta": self.beta,
                "x_lo": self.x_lo, "x_hi": self.x_hi}

    @classmethod
    def from_dict(cls, table):
        return cls(**table)

    def tol_boundary(self, x):
        b = eval_b(self, x)
        return self.tol_boundary_rel * (1.0 + b)


@dataclass
class Point:
    """State z = (x, y) with axial coordinate x >= 0 and y in R^d."""

    x: float
    y: np.ndarray

    def __post_init__(self):
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))

    @property
    def y_norm(self):
        return float(np.linalg.norm(self.y))

    def as_array(self):
        return np.concatenate(([self.x], self.y))


def eval_b(profile, x):
    """b(x); accepts scalars or arrays."""
    P = profile._params
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        return float(_k.b_val(P, float(x)))
    xs = np.ascontiguousarray(x, dtype=float)
    out = np.empty_like(xs)
    _k.b_many(P, xs.ravel(), out.ravel())
    return out


def eval_b_derivs(profile, x):
    """(b'(x), b''(x)) for x > 0; rejects x = 0 where the cusp blows up."""
    if np.any(np.asarray(x) <= 0.0):
        raise ValueError("derivatives of b are undefined at x <= 0 (cusp)")
    P = profile._params
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        bp, bpp = _k.b_derivs(P, float(x))
        return float(bp), float(bpp)
    xs = np.asarray(x, dtype=float)
    bp = np.empty_like(xs)
    bpp = np.empty_like(xs)
    for i, xi in enumerate(xs.ravel()):
        bp.ravel()[i], bpp.ravel()[i] = _k.b_derivs(P, xi)
    return bp, bpp


def _B_scalar(profile, x):
    if x <= 0.0:
        return 0.0
    a0, al = profile.a0, profile.alpha_cusp
    xl, xh = profile.x_lo, profile.x_hi
    cusp_full = a0 * xl ** (1.0 + al) / (1.0 + al)
    if x <= xl:
        return a0 * x ** (1.0 + al) / (1.0 + al)
    if x <= xh:
        nodes = profile._blend_nodes
        cum = profile._blend_cum
        i = int(np.searchsorted(nodes, x, side="right")) - 1
        i = min(max(i, 0), _BLEND_BINS - 1)
        lo = nodes[i]
        mid = 0.5 * (lo + x)
        half = 0.5 * (x - lo)
        acc = 0.0
        for j in range(5):
            acc += _GL5_WEIGHTS[j] * _k.b_val(profile._params, mid + half * _GL5_NODES[j])
        return cusp_full + cum[i] + half * acc
    blend_full = profile._blend_cum[-1]
    ai, be = profile.a_inf, profile.beta
    if be == -1.0:
        tail = ai * math.log(x / xh)
    else:
        tail = ai * (x ** (1.0 + be) - xh ** (1.0 + be)) / (1.0 + be)
    return cusp_full + blend_full + tail


def eval_B(profile, x):
    """Cumulative integral B(x) = int_0^x b(u) du; scalar or array."""
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        return _B_scalar(profile, float(x))
    xs = np.asarray(x, dtype=float)
    out = np.empty_like(xs)
    for i, xi in enumerate(xs.ravel()):
        out.ravel()[i] = _B_scalar(profile, xi)
    return out


def B_infinity(profile):
    """B(infinity); finite iff beta < -1."""
    if profile.beta >= -1.0:
        return math.inf
    xh = profile.x_hi
    tail = profile.a_inf * xh ** (1.0 + profile.beta) / (-1.0 - profile.beta)
    return _B_scalar(profile, xh) + tail


def beta_exponent(profile, audit_grid=None):
    """Tail exponent limsup x b'(x) / b(x); returns (beta, audit sequence).

    The audit sequence reports x * b'(x) / b(x) on a geometric grid so the
    claimed exponent can be eyeballed against the numerics.
    """
    if audit_grid is None:
        audit_grid = np.geomspace(max(profile.x_hi, 1.0), 1e8, 25)
    seq = []
    for x in audit_grid:
        bp, _ = eval_b_derivs(profile, float(x))
        seq.append(x * bp / eval_b(profile, float(x)))
    return profile.beta, np.asarray(seq)


def inward_normal(profile, x, u):
    """Inward unit normal at the boundary point (x, u*b(x)); e_x at the apex."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (profile.d,):
        raise ValueError("u must be a vector of length d")
    nu = np.linalg.norm(u)
    if abs(nu - 1.0) > 1e-9:
        raise ValueError("u must be a unit vector")
    if x == 0.0:
        n = np.zeros(profile.d + 1)
        n[0] = 1.0
        return n
    bp, _ = eval_b_derivs(profile, x)
    den = math.sqrt(1.0 + bp * bp)
    return np.concatenate(([bp / den], -u / den))


def squared_distance(profile, z):
    """Squared Euclidean distance from z to the boundary surface."""
    x = float(z.x)
    rho = z.y_norm
    xf = float(_k.nearest_foot(profile._params, x, rho))
    bf = float(_k.b_val(profile._params, xf))
    return (x - xf) ** 2 + (rho - bf) ** 2


def nearest_boundary_point(profile, z):
    """The boundary point realizing squared_distance (same transverse ray)."""
    x = float(z.x)
    rho = z.y_norm
    xf = float(_k.nearest_foot(profile._params, x, rho))
    bf = float(_k.b_val(profile._params, xf))
    if rho > 0.0:
        y = z.y * (bf / rho)
    else:
        y = np.zeros(profile.d)
        y[0] = bf
    return Point(xf, y)


def contains(profile, z, tol_rel=None):
    """Whether z lies in the closed domain, within the boundary tolerance."""
    if tol_rel is None:
        tol_rel = profile.tol_boundary_rel
    return bool(_k.inside(profile._params, float(z.x), z.y_norm, tol_rel))


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst_x: float
    worst_value: float
    detail: str = ""


@dataclass
class AssumptionReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __iter__(self):
        return iter(self.checks)


def check_assumptions(profile, x_max=1e8, n_grid=60):
    """Numerically audit the structural requirements on the profile.

    Checks positivity, the cusp conditions near zero, the decay of b', b''
    and b*b'' along a geometric tail grid, and beta < 1.
    """
    checks = []
    grid0 = np.geomspace(profile.x_lo * 1e-6, profile.x_lo, 20)
    bb = [eval_b(profile, x) for x in grid0]
    pos_ok = eval_b(profile, 0.0) == 0.0 and all(v > 0 for v in bb)
    checks.append(AssumptionCheck(
        "b(0) = 0 and b > 0 on (0, inf)", pos_ok, 0.0, eval_b(profile, 0.0)))

    bbp = []
    for x in grid0:
        bp, _ = eval_b_derivs(profile, float(x))
        bbp.append(eval_b(profile, float(x)) * bp)
    liminf = min(bbp)
    checks.append(AssumptionCheck(
        "liminf_{x->0} b b' > 0", liminf > 0.0, float(grid0[int(np.argmin(bbp))]),
        float(liminf)))

    ratios = []
    for x in grid0:
        bp, bpp = eval_b_derivs(profile, float(x))
        ratios.append(bpp / bp ** 3)
    lim_ok = ratios[0] <= 1e-6
    checks.append(AssumptionCheck(
        "lim_{x->0} b''/(b')^3 in (-inf, 0]", lim_ok, float(grid0[0]),
        float(ratios[0])))

    tail = np.geomspace(max(profile.x_hi, 1.0), x_max, n_grid)
    for name, f in [
        ("b' -> 0 at infinity", lambda x: abs(eval_b_derivs(profile, x)[0])),
        ("b'' -> 0 at infinity", lambda x: abs(eval_b_derivs(profile, x)[1])),
        ("b b'' -> 0 at infinity",
         lambda x: abs(eval_b(profile, x) * eval_b_derivs(profile, x)[1])),
    ]:
        vals = np.array([f(float(x)) for x in tail])
        # decay towards 0 along the grid: final value small and no blow-up
        ok = vals[-1] <= max(1e-10, vals[0] * 1e-3) or vals[-1] < 1e-12
        worst = int(np.argmax(vals))
        checks.append(AssumptionCheck(name, bool(ok), float(tail[worst]),
                                      float(vals[worst]),
                                      f"last value {vals[-1]:.3e}"))

    beta, seq = beta_exponent(profile, tail)
    beta_ok = beta < 1.0 and np.max(seq) < 1.0
    checks.append(AssumptionCheck(
        "beta < 1", bool(beta_ok), float(tail[int(np.argmax(seq))]),
        float(np.max(seq)), f"declared beta = {beta}"))
    return AssumptionReport(checks)
