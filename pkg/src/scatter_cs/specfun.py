"""Bessel/Hankel functions of order zero and free-space Helmholtz Green functions.

Conventions: time dependence e^{-iwt}, unit wave speed, and G is the outgoing
fundamental solution of -(Laplacian + w^2):

    2D:  G(r) = -(i/4) H0^(1)(w|r|)
    3D:  G(r) = exp(i w |r|) / (4 pi |r|)

All functions accept scalars or numpy arrays and return the same shape.
"""
import numpy as np
from scipy import special

from .errors import DomainError, SingularityError

# |delta| below COINCIDENT_RTOL * length_scale counts as a self-interaction
COINCIDENT_RTOL = 1e-14


def _as_real(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _ret(arr):
    return arr[()] if isinstance(arr, np.ndarray) and arr.ndim == 0 else arr


def bessel_j0(x):
    """J0(x). J0 is even, so negative arguments are folded by |x|."""
    x = np.abs(_as_real(x))
    return _ret(special.j0(x))


def bessel_y0(x):
    """Y0(x) for x > 0."""
    x = _as_real(x)
    if np.any(x <= 0):
        raise DomainError("Y0 requires x > 0")
    return _ret(special.y0(x))


def hankel1_0(x):
    """Hankel function of the first kind, order zero: J0(x) + i Y0(x), x > 0."""
    x = _as_real(x)
    if np.any(x <= 0):
        raise DomainError("H0^(1) has a logarithmic singularity at 0; need x > 0")
    return _ret(special.j0(x) + 1j * special.y0(x))


def _distance(delta, dim, length_scale):
    d = np.asarray(delta, dtype=float)
    if d.shape[-1] != dim:
        raise DomainError(f"displacement must have trailing dimension {dim}, got {d.shape}")
    if not np.all(np.isfinite(d)):
        raise DomainError("displacement must be finite")
    r = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(r <= COINCIDENT_RTOL * length_scale):
        raise SingularityError("Green function evaluated at coincident points")
    return r


def _check_omega(omega):
    omega = float(omega)
    if not np.isfinite(omega) or omega <= 0:
        raise DomainError("wavenumber must be positive and finite")
    return omega


def green2d(delta, omega, length_scale=1.0):
    """2D outgoing Green function -(i/4) H0^(1)(omega |delta|).

    ``delta`` has shape (..., 2); the result has shape (...).
    """
    omega = _check_omega(omega)
    r = _distance(delta, 2, length_scale)
    kr = omega * r
    return _ret(-0.25j * (special.j0(kr) + 1j * special.y0(kr)))


def green3d(delta, omega, length_scale=1.0):
    """3D outgoing Green function exp(i omega |delta|) / (4 pi |delta|)."""
    omega = _check_omega(omega)
    r = _distance(delta, 3, length_scale)
    return _ret(np.exp(1j * omega * r) / (4.0 * np.pi * r))


def green(delta, omega, dim, length_scale=1.0):
    """Dispatch to :func:`green2d` or :func:`green3d` by spatial dimension."""
    if dim == 2:
        return green2d(delta, omega, length_scale)
    if dim == 3:
        return green3d(delta, omega, length_scale)
    raise DomainError(f"dimension must be 2 or 3, got {dim}")


def green_abs_at(distance, omega, dim):
    """|G| as a function of distance alone (used for Delta_max bounds)."""
    distance = _as_real(distance, "distance")
    if dim == 2:
        return _ret(0.25 * np.abs(special.j0(omega * distance) + 1j * special.y0(omega * distance)))
    return _ret(1.0 / (4.0 * np.pi * distance))
