import numpy as np
import pytest

from horndiff.dynamics import CovarianceSpec, ReflectionSpec
from horndiff.geometry import DomainProfile


@pytest.fixture
def strip_profile():
    return DomainProfile(d=1, a0=1.0, alpha_cusp=0.5, a_inf=1.0, beta=0.0,
                         x_lo=0.5, x_hi=2.0)


@pytest.fixture
def sqrt_profile():
    """b(x) = a x^(1/2) on both ends, narrow blend."""
    return DomainProfile(d=1, a0=1.0, alpha_cusp=0.5, a_inf=1.0, beta=0.5,
                         x_lo=0.5, x_hi=2.0)


@pytest.fixture
def reciprocal_profile():
    return DomainProfile(d=1, a0=1.0, alpha_cusp=0.5, a_inf=1.0, beta=-1.0,
                         x_lo=0.5, x_hi=2.0)


@pytest.fixture
def explosive_profile():
    return DomainProfile(d=1, a0=1.0, alpha_cusp=0.5, a_inf=1.0, beta=-2.0,
                         x_lo=0.5, x_hi=2.0)


@pytest.fixture
def unit_cov():
    return CovarianceSpec(kind="isotropic", d=1, v=1.0, delta_ellipticity=0.5)


@pytest.fixture
def unit_refl():
    return ReflectionSpec(s0=1.0, c0=1.0)


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def second_diff(f, x, h):
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def richardson_grad(f, x, h=1e-5):
    """Richardson-extrapolated central difference."""
    d1 = central_diff(f, x, h)
    d2 = central_diff(f, x, h / 2.0)
    return (4.0 * d2 - d1) / 3.0
