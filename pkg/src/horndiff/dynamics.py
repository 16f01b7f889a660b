"""Diffusion coefficient and oblique reflection field.

Two covariance families are supported: isotropic ``v^2 * I`` and a diagonal
profile whose entries are rational functions ``a + c / (1 + x)`` (bounded,
Lipschitz, with computable limits).  The reflection field is the rotated-
normal family: its axial projection tends to s0 and its transverse
projection (onto -e_u) tends to c0, which are the constants entering the
strong-law rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import eval_b, inward_normal

ISOTROPIC = "isotropic"
DIAGONAL_PROFILE = "diagonal_profile"


@dataclass
class CovarianceSpec:
    """Sigma(z): isotropic v^2*I or diag(sx^2(x), st^2(x)*I_d).

    Rational entries sx^2(x) = axial[0] + axial[1]/(1+x) and similarly for
    the transverse block.  sigma_sq_limit is the limiting total transverse
    variance (Assumption-A constant sigma^2).
    """

    kind: str = ISOTROPIC
    d: int = 1
    v: float | None = 1.0
    axial: tuple = (1.0, 0.0)
    transverse: tuple = (1.0, 0.0)
    delta_ellipticity: float = 0.5
    sigma_sq_limit: float | None = None
    s_max: float = field(init=False)

    def __post_init__(self):
        if self.delta_ellipticity <= 0:
            raise ValueError("ellipticity bound delta must be positive")
        if self.kind == ISOTROPIC:
            if self.v is None or self.v <= 0:
                raise ValueError("isotropic covariance needs v > 0")
            limit = self.d * self.v ** 2
            if self.sigma_sq_limit is None:
                self.sigma_sq_limit = limit
            elif abs(self.sigma_sq_limit - limit) > 1e-12 * limit:
                raise ValueError(
                    f"isotropic kind forces sigma^2 = d*v^2 = {limit}")
            if self.v ** 2 < self.delta_ellipticity:
                raise ValueError("eigenvalue v^2 below ellipticity bound")
            self.s_max = float(self.v)
        elif self.kind == DIAGONAL_PROFILE:
            for name, (a, c) in (("axial", self.axial),
                                 ("transverse", self.transverse)):
                lo = min(a, a + c)  # entry is monotone in x on [0, inf)
                if lo < self.delta_ellipticity:
                    raise ValueError(
                        f"{name} entry drops to {lo} < delta ellipticity")
            limit = self.d * self.transverse[0]
            if self.sigma_sq_limit is None:
                self.sigma_sq_limit = limit
            elif abs(self.sigma_sq_limit - limit) > 1e-12 * max(limit, 1.0):
                raise ValueError(
                    f"diagonal kind has sigma^2 = d*transverse_a = {limit}")
            hi = max(self.axial[0], self.axial[0] + self.axial[1],
                     self.transverse[0], self.transverse[0] + self.transverse[1])
            self.s_max = float(math.sqrt(hi))
        else:
            raise ValueError(f"unknown covariance kind {self.kind!r}")

    def diag_entries(self, x):
        """(axial variance, transverse variance) at abscissa x."""
        if self.kind == ISOTROPIC:
            return self.v ** 2, self.v ** 2
        sx = self.axial[0] + self.axial[1] / (1.0 + x)
        st = self.transverse[0] + self.transverse[1] / (1.0 + x)
        return sx, st

    def matrix(self, z):
        """Sigma(z) as a (d+1)x(d+1) array."""
        sx, st = self.diag_entries(float(z.x))
        m = np.diag(np.concatenate(([sx], np.full(self.d, st))))
        return m

    def kernel_params(self):
        """Flat parameter array consumed by the compiled step loop."""
        if self.kind == ISOTROPIC:
            return np.array([0.0, self.v, 0.0, 0.0, 0.0, 0.0, self.s_max])
        return np.array([1.0, 0.0, self.axial[0], self.axial[1],
                         self.transverse[0], self.transverse[1], self.s_max])

    def to_dict(self):
        out = {"kind": self.kind, "delta": self.delta_ellipticity}
        if self.kind == ISOTROPIC:
            out["v"] = self.v
        else:
            out["axial"] = list(self.axial)
            out["transverse"] = list(self.transverse)
        return out


def sym_sqrt(mat):
    """Symmetric PSD square root via eigendecomposition."""
    w, q = np.linalg.eigh(np.asarray(mat, dtype=float))
    if np.any(w < -1e-12):
        raise ValueError("matrix is not positive semidefinite")
    return (q * np.sqrt(np.clip(w, 0.0, None))) @ q.T


def sigma_sqrt(spec, z):
    """Symmetric square root of Sigma(z)."""
    sx, st = spec.diag_entries(float(z.x))
    root = np.diag(np.concatenate(([math.sqrt(sx)],
                                   np.full(spec.d, math.sqrt(st)))))
    return root


def sigma_trace_gap(spec, profile, x, n_transverse=16):
    """sup over a transverse grid of |trace Sigma - Sigma_xx - sigma^2|."""
    b = eval_b(profile, x)
    worst = 0.0
    for frac in np.linspace(0.0, 1.0, n_transverse):
        y = np.zeros(spec.d)
        y[0] = frac * b
        sx, st = spec.diag_entries(float(x))
        gap = abs((sx + spec.d * st) - sx - spec.sigma_sq_limit)
        worst = max(worst, gap)
    return worst


@dataclass
class ReflectionSpec:
    """Oblique reflection constants.

    The built field is phi_x(u) = n_x(u) + s0*e_x - (c0 - 1)*e_u for x > 0
    and phi_0 = e_x, so that <phi, e_x> -> s0 and <phi, -e_u> -> c0.
    alpha_angle = arctan(s0/c0) is the asymptotic angle from the normal.
    """

    s0: float
    c0: float
    alpha_angle: float = field(init=False)

    def __post_init__(self):
        if not (self.s0 > 0.0 and math.isfinite(self.s0)):
            raise ValueError("s0 must lie in (0, inf)")
        if not (self.c0 > 0.0 and math.isfinite(self.c0)):
            raise ValueError("c0 must lie in (0, inf)")
        self.alpha_angle = math.atan2(self.s0, self.c0)

    def to_dict(self):
        return {"s0": self.s0, "c0": self.c0}


def phi(spec, profile, x, u):
    """Reflection vector at the boundary point (x, u*b(x))."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x == 0.0:
        out = np.zeros(profile.d + 1)
        out[0] = 1.0
        return out
    n = inward_normal(profile, x, u)
    out = n.copy()
    out[0] += spec.s0
    out[1:] -= (spec.c0 - 1.0) * u
    return out
