"""Sensing matrices, coherence/spectral diagnostics and Herglotz-integral predictions."""
from dataclasses import dataclass, field
import math

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConvergenceError, DegenerateMatrixError, DomainError, ScatterError
from .scene import SphereDensity, delta_max, plane_direction, sphere_direction
from .specfun import green, green_abs_at

GL_NODES = 32
# radians of phase per 32-node Gauss-Legendre panel
PANEL_PHASE = 40.0
_GL_X, _GL_W = leggauss(GL_NODES)


@dataclass
class SensingMatrix:
    """Dense complex measurement matrix with its geometry.

    MIMO rows are measurement-major: row n*(k-1) + l (1-based) pairs incident
    angle k with sampling angle l.
    """

    entries: np.ndarray
    kind: str
    omega: float
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __matmul__(self, other):
        return self.entries @ other


def _entries(phi):
    return phi.entries if isinstance(phi, SensingMatrix) else np.asarray(phi)


def _directions(angles, dim):
    a = np.asarray(angles, dtype=float)
    if dim == 3:
        a = a.reshape(-1, 2)
        return sphere_direction(a[:, 0], a[:, 1])
    return plane_direction(a.reshape(-1))


# --------------------------------------------------------------------------
# builders

def build_simo_farfield(lat, ttheta, omega):
    """Phi_lj = exp(-i w r_j . rhat_l): SIMO far-field matrix (independent of the incident wave).

    In 3D ``ttheta`` holds (theta, phi) pairs.
    """
    rhat = _directions(ttheta, lat.dim)
    if rhat.shape[0] < 1:
        raise DomainError("need at least one sampling angle")
    E = np.exp(-1j * omega * (rhat @ lat.points.T))
    return SensingMatrix(E, "simo-farfield", float(omega), {"lattice": lat, "ttheta": np.asarray(ttheta)})


def build_mimo_born(lat, thetas, ttheta, omega, multistatic=False):
    """MIMO Born matrix, entry (n(k-1)+l, j) = exp(-i w r_j . rhat_l) exp(i w r_j . d_k).

    With ``multistatic=True`` the sampling directions are the reversed incident
    ones (rhat_k = -d_k) and ``ttheta`` is ignored.
    """
    d = _directions(thetas, lat.dim)
    rhat = -d if multistatic else _directions(ttheta, lat.dim)
    if d.shape[0] < 1 or rhat.shape[0] < 1:
        raise DomainError("MIMO needs p >= 1 and n >= 1")
    inc = np.exp(1j * omega * (d @ lat.points.T))          # (p, m)
    out = np.exp(-1j * omega * (rhat @ lat.points.T))      # (n, m)
    E = (inc[:, None, :] * out[None, :, :]).reshape(-1, lat.m)
    return SensingMatrix(E, "mimo-born", float(omega),
                         {"lattice": lat, "thetas": np.asarray(thetas), "ttheta": np.asarray(ttheta)})


def build_dt_nearfield(lat, sensors, omega, dim=None):
    """Near-field matrix with entries G(a_j - r_l) (the w^2 factor dropped)."""
    dim = lat.dim if dim is None else dim
    pts = sensors.sensor_points if hasattr(sensors, "sensor_points") else np.asarray(sensors, float)
    if pts.shape[-1] != dim or lat.dim != dim:
        raise DomainError("sensor points, lattice and requested dimension disagree")
    E = green(pts[:, None, :] - lat.points[None, :, :], omega, dim, lat.spacing)
    return SensingMatrix(np.asarray(E).reshape(pts.shape[0], lat.m), f"dt-nearfield-{dim}d", float(omega),
                         {"lattice": lat, "sensors": sensors})


def build_for_sensors(lat, sensors, omega, model="born"):
    """Matrix matching a :class:`SensorSet`: MIMO Born when incident angles are given, SIMO otherwise."""
    if sensors.kind == "near-field":
        return build_dt_nearfield(lat, sensors, omega)
    if model == "born" and sensors.p > 0:
        return build_mimo_born(lat, sensors.incident_angles, sensors.sampling_angles, omega)
    return build_simo_farfield(lat, sensors.sampling_angles, omega)


# --------------------------------------------------------------------------
# diagnostics

def _normalized_gram(E):
    norms = np.linalg.norm(E, axis=0)
    if np.any(norms == 0):
        raise DegenerateMatrixError("matrix has a zero column")
    Q = E / norms
    return Q.conj().T @ Q


def coherence(phi):
    """Mutual coherence: max_{i != j} |<Phi_i, Phi_j>| / (||Phi_i|| ||Phi_j||)."""
    E = _entries(phi)
    if E.ndim != 2 or E.shape[1] < 2:
        raise DegenerateMatrixError("coherence needs at least two columns")
    A = np.abs(_normalized_gram(E))
    np.fill_diagonal(A, 0.0)
    return float(A.max())


def gram_row_coherence(phi):
    """Coherence of the row system, mu(Phi^*)."""
    E = _entries(phi)
    if E.shape[0] < 2:
        raise DegenerateMatrixError("row coherence needs at least two rows")
    return coherence(E.conj().T)


def spectral_norm(phi, tol=1e-10, maxiter=100_000):
    """Largest singular value by power iteration on Phi^* Phi.

    Stops when the Rayleigh quotient changes by at most ``tol`` (relative) and
    the eigen-residual ||A v - lam v|| / lam is at most sqrt(tol).
    """
    E = _entries(phi)
    if E.size == 0:
        raise DomainError("empty matrix")
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(E.shape[1]) + 1j * rng.standard_normal(E.shape[1])
    v /= np.linalg.norm(v)
    lam_old = 0.0
    for _ in range(maxiter):
        w = E.conj().T @ (E @ v)
        lam = float(np.real(np.vdot(v, w)))
        if lam <= 0:
            return 0.0
        res = np.linalg.norm(w - lam * v) / lam
        if abs(lam - lam_old) <= tol * lam and res <= math.sqrt(tol):
            return math.sqrt(lam)
        lam_old = lam
        v = w / np.linalg.norm(w)
    raise ConvergenceError("power iteration did not converge")


def _dirichlet_ratio(z, N):
    s = np.sin(z)
    small = np.abs(s) < 1e-12
    out = np.empty_like(z)
    out[small] = N
    out[~small] = np.abs(np.sin(N * z[~small]) / s[~small])
    return out


def gram_entry_closed_form(lat, angles, omega):
    """Normalized row inner product (1/m)|<row(theta, ttheta), row(theta', ttheta')>| of the MIMO matrix.

    ``angles`` = (theta, theta', ttheta, ttheta'); arrays broadcast. The lattice
    sums are geometric series, giving a product of two Dirichlet-kernel ratios
    |sin(sqrt(m) z)/sin(z)|. At z = k*pi the removable singularity takes its
    limit sqrt(m).
    """
    if lat.dim != 2:
        raise DomainError("closed-form Gram entries are for the square lattice")
    th, th2, tt, tt2 = (np.asarray(a, dtype=float) for a in angles)
    vx = np.cos(th) - np.cos(tt) - np.cos(th2) + np.cos(tt2)
    vz = np.sin(th) - np.sin(tt) - np.sin(th2) + np.sin(tt2)
    N = lat.side
    zx = np.atleast_1d(omega * lat.spacing * vx / 2)
    zz = np.atleast_1d(omega * lat.spacing * vz / 2)
    val = _dirichlet_ratio(zx, N) * _dirichlet_ratio(zz, N) / lat.m
    return val[0] if np.ndim(th) == 0 and val.size == 1 else val


# --------------------------------------------------------------------------
# Herglotz expectations

def _panel_sum(fun, a, b, panels):
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return np.sum(w * fun(x))


def _adaptive(fun, a, b, freq, tol, max_panels=1 << 20):
    panels = max(1, int(math.ceil(freq * (b - a) / PANEL_PHASE)))
    prev = _panel_sum(fun, a, b, panels)
    while panels <= max_panels:
        panels *= 2
        cur = _panel_sum(fun, a, b, panels)
        if abs(cur - prev) <= tol:
            return cur
        prev = cur
    raise ConvergenceError("Herglotz quadrature did not converge")


def herglotz_expectation(f, omega, delta, tol=1e-10):
    """E_f[exp(i w d(theta) . delta)] = integral of exp(i w d(theta).delta) f(theta) d theta.

    Composite Gauss-Legendre on each support interval of ``f``, with the panel
    count doubled until two successive estimates agree to ``tol``.
    """
    delta = np.asarray(delta, dtype=float)
    kx, kz = omega * delta[0], omega * delta[1]
    freq = math.hypot(kx, kz)

    def integrand(t):
        return np.exp(1j * (kx * np.cos(t) + kz * np.sin(t))) * f(t)

    return complex(sum(_adaptive(integrand, a, b, freq, tol / len(f.intervals)) for a, b in f.intervals))


def _sphere_quadrature(f, k, theta_panels, n_phi, chunk=256):
    edges = np.linspace(-math.pi / 2, math.pi / 2, theta_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    wt = (half[:, None] * _GL_W[None, :]).ravel()
    # trapezoid rule in phi is spectrally accurate for periodic integrands
    p = -math.pi + 2 * math.pi * np.arange(n_phi) / n_phi
    wp = 2 * math.pi / n_phi
    cp, sp = np.cos(p), np.sin(p)
    total = 0j
    for i in range(0, t.size, chunk):
        tc = t[i:i + chunk, None]
        ct = np.cos(tc)
        phase = k[0] * ct * cp[None, :] + k[1] * ct * sp[None, :] + k[2] * np.sin(tc)
        vals = np.exp(1j * phase) * f(tc, p[None, :])
        total += wt[i:i + chunk] @ vals.sum(axis=1) * wp
    return total


def herglotz_expectation_3d(f, omega, delta, tol=1e-10, max_refine=6):
    """Sphere analogue: double integral over (theta, phi) of exp(i w d . delta) f(theta, phi).

    Gauss-Legendre panels in theta, trapezoid rule in the periodic phi
    variable; both resolutions are doubled until successive estimates agree.
    """
    k = omega * np.asarray(delta, dtype=float)
    freq = float(np.linalg.norm(k))
    tp = max(1, int(math.ceil(freq * math.pi / PANEL_PHASE)))
    nphi = int(math.ceil(freq)) + 32
    prev = _sphere_quadrature(f, k, tp, nphi)
    for _ in range(max_refine):
        tp, nphi = 2 * tp, 2 * nphi
        cur = _sphere_quadrature(f, k, tp, nphi)
        if abs(cur - prev) <= tol:
            return complex(cur)
        prev = cur
    raise ConvergenceError("sphere quadrature did not converge")


def lattice_differences(lat):
    """Distinct nonzero difference vectors r - r' up to sign (integer offsets times spacing)."""
    rng = range(-(lat.side - 1), lat.side)
    offs = np.array(np.meshgrid(*([list(rng)] * lat.dim), indexing="ij")).reshape(lat.dim, -1).T
    # canonical sign: first nonzero component positive
    keep = []
    for o in offs:
        nz = np.flatnonzero(o)
        if nz.size and o[nz[0]] > 0:
            keep.append(o)
    return lat.spacing * np.array(keep, dtype=float)


def chi(lat, f, omega, tol=1e-10):
    """Max over distinct lattice pairs of |Herglotz expectation| for density f (2D or sphere)."""
    diffs = lattice_differences(lat)
    if isinstance(f, SphereDensity):
        vals = [abs(herglotz_expectation_3d(f, omega, d, tol)) for d in diffs]
    else:
        if lat.dim != 2:
            raise DomainError("angle densities on [-pi, pi] need a 2D lattice")
        vals = [abs(herglotz_expectation(f, omega, d, tol)) for d in diffs]
    return float(max(vals))


# --------------------------------------------------------------------------
# predictions

def k_from_delta(m, delta):
    """K with m = (delta/8) exp(K^2/2)."""
    return math.sqrt(2.0 * math.log(8.0 * m / delta))


def coherence_bound_prediction(chi_i, chi_s, K, n, p):
    """(chi_i + sqrt(2) K / sqrt(p)) (chi_s + sqrt(2) K / sqrt(n))."""
    if min(chi_i, chi_s) < 0 or K <= 0 or n < 1 or p < 1:
        raise DomainError("coherence prediction needs chi >= 0, K > 0, n, p >= 1")
    r2K = math.sqrt(2.0) * K
    return (chi_i + r2K / math.sqrt(p)) * (chi_s + r2K / math.sqrt(n))


def dt_bound_shape(lat, omega, aperture, delta_min, K, n, c=1.0):
    """|G(Delta_max)|^-2 (sqrt(2)K/sqrt(n) + trend), trend c/sqrt(wL) in 2D, c/(wL) in 3D.

    Returns (bound, noise_term, trend_term, delta_max).
    """
    dm = delta_max(lat, aperture, delta_min)
    g = green_abs_at(dm, omega, lat.dim)
    noise = math.sqrt(2.0) * K / math.sqrt(n)
    wl = omega * aperture
    trend = c / math.sqrt(wl) if lat.dim == 2 else c / wl
    return (noise + trend) / g ** 2, noise, trend, dm


# --------------------------------------------------------------------------
# matrix files

def write_matrix(path, phi):
    """Header "rows cols kind omega", then one line per row of interleaved "re im" values.

    ``path`` may also be an open text stream.
    """
    E = _entries(phi)
    kind = phi.kind if isinstance(phi, SensingMatrix) else "raw"
    omega = phi.omega if isinstance(phi, SensingMatrix) else 0.0
    if hasattr(path, "write"):
        _write_matrix_rows(path, E, kind, omega)
        return
    with open(path, "w") as fh:
        _write_matrix_rows(fh, E, kind, omega)


def _write_matrix_rows(fh, E, kind, omega):
    fh.write(f"{E.shape[0]} {E.shape[1]} {kind} {omega!r}\n")
    for row in E:
        fh.write(" ".join(f"{float(v.real)!r} {float(v.imag)!r}" for v in row))
        fh.write("\n")


def read_matrix(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ScatterError(f"{path}: bad matrix header")
        rows, cols, kind, omega = int(header[0]), int(header[1]), header[2], float(header[3])
        data = np.array(fh.read().split(), dtype=float)
    if data.size != 2 * rows * cols:
        raise ScatterError(f"{path}: expected {2 * rows * cols} numbers, found {data.size}")
    E = (data[0::2] + 1j * data[1::2]).reshape(rows, cols)
    return SensingMatrix(E, kind, omega)
