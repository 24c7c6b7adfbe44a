"""Foldy-Lax (exact) and Born forward models for point scatterers on a lattice.

The scattering amplitude follows

    A(rhat, d) = (w^2 / 4 pi) sum_j nu_j u(r_j) exp(-i w r_j . rhat)

with the exciting field u solving the Foldy-Lax system (I - w^2 G V) U = U^i
on the support, G the zero-diagonal matrix of Green-function couplings.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DomainError, ResonanceError
from .specfun import green
from .scene import Target

RESONANCE_RCOND = 1e-12
RESIDUAL_RTOL = 1e-10


# --------------------------------------------------------------------------
# incident fields

class PlaneWave:
    """u^i(r) = exp(i w r . d) for a unit direction d."""

    def __init__(self, direction):
        d = np.asarray(direction, dtype=float)
        nrm = np.linalg.norm(d)
        if not np.isclose(nrm, 1.0, atol=1e-12):
            raise DomainError("plane-wave direction must be a unit vector")
        self.direction = d
        self.dim = d.size

    def __call__(self, points, omega):
        return np.exp(1j * omega * (np.asarray(points, dtype=float) @ self.direction))

    def __repr__(self):
        return f"PlaneWave({self.direction.tolist()})"


class PointSource:
    """u^i(r) = G(r, r0) for a source at r0."""

    def __init__(self, position, length_scale=1.0):
        self.position = np.asarray(position, dtype=float)
        self.dim = self.position.size
        self.length_scale = length_scale

    def __call__(self, points, omega):
        return green(np.asarray(points, dtype=float) - self.position, omega, self.dim, self.length_scale)

    def __repr__(self):
        return f"PointSource({self.position.tolist()})"


# --------------------------------------------------------------------------
# Foldy-Lax

def coupling_matrix(points, omega, dim, length_scale=1.0):
    """Symmetric zero-diagonal matrix [G(r_j, r_l)]_{j != l} over the given points."""
    pts = np.asarray(points, dtype=float).reshape(-1, dim)
    s = pts.shape[0]
    G = np.zeros((s, s), dtype=complex)
    if s > 1:
        i, j = np.triu_indices(s, k=1)
        vals = green(pts[i] - pts[j], omega, dim, length_scale)
        G[i, j] = vals
        G[j, i] = vals
    return G


def support_points(target, lat):
    if target.m != lat.m:
        raise DomainError(f"target length {target.m} does not match lattice size {lat.m}")
    return lat.points[target.idx]


def support_coupling(target, lat, omega):
    return coupling_matrix(support_points(target, lat), omega, lat.dim, lat.spacing)


def gv_norm(target, lat, omega):
    """w^2 ||G V|| with ||.|| the maximum absolute row sum."""
    if target.s == 0:
        return 0.0
    G = support_coupling(target, lat, omega)
    return float(omega ** 2 * np.max(np.sum(np.abs(G * target.nu_s[None, :]), axis=1)))


@dataclass
class ExcitingField:
    """Total field at the scatterer sites (support order)."""

    u: np.ndarray
    support: tuple
    points: np.ndarray
    incident: np.ndarray
    condition_estimate: float


def _rcond(M):
    lu, piv = linalg.lu_factor(M, check_finite=False)
    anorm = np.max(np.sum(np.abs(M), axis=0))
    gecon = linalg.get_lapack_funcs("gecon", (lu,))
    rc, info = gecon(lu, anorm, norm="1")
    return lu, piv, float(rc)


def foldy_lax_matrix(target, lat, omega):
    G = support_coupling(target, lat, omega)
    return np.eye(target.s, dtype=complex) - omega ** 2 * G * target.nu_s[None, :]


def foldy_lax_solve(target, lat, incident, omega):
    """Solve (I - w^2 G V) U = U^i on the support by LU with partial pivoting.

    Raises :class:`ResonanceError` when the reciprocal 1-norm condition number
    falls below 1e-12.
    """
    pts = support_points(target, lat)
    ui = np.asarray(incident(pts, omega), dtype=complex).reshape(-1)
    if target.s == 0:
        return ExcitingField(ui, (), pts, ui, 1.0)
    M = foldy_lax_matrix(target, lat, omega)
    lu, piv, rc = _rcond(M)
    if not rc >= RESONANCE_RCOND:
        raise ResonanceError(f"Foldy-Lax system is resonant (rcond = {rc:.3e})", rcond=rc)
    u = linalg.lu_solve((lu, piv), ui, check_finite=False)
    scale = np.linalg.norm(ui)
    for _ in range(3):
        r = ui - M @ u
        if np.linalg.norm(r) <= RESIDUAL_RTOL * scale:
            break
        u = u + linalg.lu_solve((lu, piv), r, check_finite=False)
    return ExcitingField(u, target.support, pts, ui, rc)


def target_vector(target, field):
    """X = (nu_j u(r_j)) on the full grid."""
    X = np.zeros(target.m, dtype=complex)
    X[target.idx] = target.nu_s * field.u
    return X


# --------------------------------------------------------------------------
# amplitudes and near-field data

def _phase(points, omega, rhat):
    rhat = np.asarray(rhat, dtype=float)
    return np.exp(-1j * omega * (rhat @ np.asarray(points, dtype=float).T))


def scattering_amplitude(target, U, omega, rhat):
    """A(rhat) = (w^2/4pi) sum_j nu_j u(r_j) exp(-i w r_j . rhat).

    ``rhat`` may be a single unit vector or a (k, dim) stack; ``U`` is the
    :class:`ExcitingField` of ``target``.
    """
    if tuple(U.support) != tuple(target.support):
        raise DomainError("exciting field was solved for a different support")
    if target.s == 0:
        return np.zeros(np.asarray(rhat).shape[:-1], dtype=complex)[()]
    weights = target.nu_s * U.u
    return omega ** 2 / (4 * np.pi) * (_phase(U.points, omega, rhat) @ weights)


def born_amplitude(target, lat, omega, d, rhat):
    """Born amplitude: the exciting field is replaced by exp(i w r . d)."""
    pts = support_points(target, lat)
    ui = PlaneWave(d)(pts, omega)
    return omega ** 2 / (4 * np.pi) * (_phase(pts, omega, rhat) @ (target.nu_s * ui))


def exact_amplitude(target, lat, omega, d, rhat):
    """Convenience: Foldy-Lax solve for plane-wave incidence d, then the amplitude at rhat."""
    U = foldy_lax_solve(target, lat, PlaneWave(d), omega)
    return scattering_amplitude(target, U, omega, rhat)


def point_source_amplitude(target, lat, omega, r0, rhat):
    """Far-field amplitude at rhat for the point-source incidence u^i = G(., r0)."""
    U = foldy_lax_solve(target, lat, PointSource(r0, lat.spacing), omega)
    return scattering_amplitude(target, U, omega, rhat)


def scattered_field(target, lat, omega, incident, points):
    """u^s at arbitrary observation points: w^2 sum_j G(r, r_j) nu_j u(r_j)."""
    U = foldy_lax_solve(target, lat, incident, omega)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if target.s == 0:
        return np.zeros(pts.shape[0], dtype=complex)
    K = green(pts[:, None, :] - U.points[None, :, :], omega, lat.dim, lat.spacing)
    return omega ** 2 * (K.reshape(pts.shape[0], -1) @ (target.nu_s * U.u))


def nearfield_data(target, lat, omega, source, sensors):
    """Scattered field at the near-field sensor points for a point source or plane wave.

    ``source`` is a :class:`PointSource`, a :class:`PlaneWave`, or a raw
    position (treated as a point source).
    """
    if not callable(source):
        source = PointSource(source, lat.spacing)
    pts = sensors.sensor_points if hasattr(sensors, "sensor_points") else sensors
    return scattered_field(target, lat, omega, source, pts)


# --------------------------------------------------------------------------
# resonance and reciprocity

def resonance_spectrum(target, lat, omega):
    """Eigenvalues of w^2 G V on the support."""
    if target.s < 1:
        raise DomainError("resonance spectrum needs at least one scatterer")
    G = support_coupling(target, lat, omega)
    return np.linalg.eigvals(omega ** 2 * G * target.nu_s[None, :])


def resonant_pair_target(lat, j1, j2, mag1, mag2, omega):
    """Two-scatterer target whose strengths carry the phase of conj(G(r1, r2)).

    With this choice w^2 G V is real, symmetric and has the positive eigenvalue
    w^2 sqrt(mag1 mag2) |G(r1, r2)|. ``j1``, ``j2`` are 0-based columns.
    """
    g = complex(green(lat.points[j1] - lat.points[j2], omega, lat.dim, lat.spacing))
    ph = np.conj(g) / abs(g)
    return Target.from_support(lat.m, sorted((j1, j2)), [mag1 * ph, mag2 * ph] if j1 < j2 else [mag2 * ph, mag1 * ph])


def find_pair_resonance(lat, j1, j2, mag1, mag2, lo=1e-3, hi=1e3):
    """Resonance frequency of the phase-matched scatterer pair.

    Solves w = |nu1 nu2|^(-1/4) |G(r1, r2; w)|^(-1/2) by bisection, with G
    re-evaluated at every trial frequency. Returns (omega, target).
    """
    r = float(np.linalg.norm(lat.points[j1] - lat.points[j2]))
    gm = np.sqrt(mag1 * mag2)

    def excess(w):
        g = abs(complex(green(np.r_[r, np.zeros(lat.dim - 1)], w, lat.dim)))
        return w * w * gm * g - 1.0

    flo, fhi = excess(lo), excess(hi)
    if flo * fhi > 0:
        raise DomainError("no resonance bracketed in the frequency interval")
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = excess(mid)
        if fm == 0:
            lo = hi = mid
            break
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    w = lo if abs(excess(lo)) <= abs(excess(hi)) else hi
    return w, resonant_pair_target(lat, j1, j2, mag1, mag2, w)


def reciprocity_residual(target, lat, omega, d, rhat, model="exact"):
    """|A(rhat, d) - A(-d, -rhat)| / max(|A(rhat, d)|, tiny) from two independent solves."""
    d = np.asarray(d, dtype=float)
    rhat = np.asarray(rhat, dtype=float)
    if model == "exact":
        a1 = exact_amplitude(target, lat, omega, d, rhat)
        a2 = exact_amplitude(target, lat, omega, -rhat, -d)
    elif model == "born":
        a1 = born_amplitude(target, lat, omega, d, rhat)
        a2 = born_amplitude(target, lat, omega, -rhat, -d)
    else:
        raise DomainError(f"unknown model {model!r}")
    return float(abs(a1 - a2) / max(abs(a1), np.finfo(float).tiny))
