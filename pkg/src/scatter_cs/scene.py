"""Lattice geometry, random target/sensor ensembles and Blind-Spot analysis.

Index conventions: :func:`lattice_point` and the scene file use the 1-based
lattice index ``j``; every numpy array (targets, matrix columns) uses the
0-based column ``j - 1``.
"""
from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError

MASK64 = (1 << 64) - 1
CDF_KNOTS = 10_000
BLIND_SPOT_TOL = 1e-12


# --------------------------------------------------------------------------
# seeding

def splitmix64(x):
    """One step of the SplitMix64 output function on a 64-bit integer."""
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(master_seed, trial):
    """Seed of Monte Carlo trial ``trial``: master XOR splitmix(trial)."""
    return (int(master_seed) & MASK64) ^ splitmix64(trial)


def rng_from(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed) & MASK64)


# --------------------------------------------------------------------------
# lattice

@dataclass(frozen=True)
class Lattice:
    """Square (2D) or cubic (3D) grid with ``side`` points per axis and spacing ``spacing``.

    Point j (1-based) sits at (j1*l, j2*l) with j = (j1-1)*side + j2 in 2D and
    at (j1*l, j2*l, j3*l) with j = ((j1-1)*side + (j2-1))*side + j3 in 3D.
    The last coordinate is the depth axis z.
    """

    spacing: float
    side: int
    dim: int = 2

    def __post_init__(self):
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise DomainError("lattice spacing must be positive")
        if int(self.side) != self.side or self.side < 1:
            raise DomainError("lattice side must be a positive integer")
        if self.dim not in (2, 3):
            raise DomainError("lattice dimension must be 2 or 3")

    @property
    def m(self):
        return self.side ** self.dim

    @property
    def width(self):
        """l * m^(1/d), the width used in the Delta_max formulas."""
        return self.spacing * self.side

    @cached_property
    def points(self):
        """(m, dim) array of point coordinates in column order."""
        ax = self.spacing * np.arange(1, self.side + 1, dtype=float)
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        pts.setflags(write=False)
        return pts

    def multi_index(self, j):
        """(j1, j2[, j3]) for the 1-based index j."""
        if int(j) != j or not 1 <= j <= self.m:
            raise DomainError(f"lattice index {j} outside 1..{self.m}")
        return tuple(int(k) + 1 for k in np.unravel_index(int(j) - 1, (self.side,) * self.dim))

    def index(self, *ks):
        """Inverse of :meth:`multi_index`."""
        if len(ks) != self.dim or any(not 1 <= k <= self.side for k in ks):
            raise DomainError(f"grid index {ks} outside the lattice")
        return int(np.ravel_multi_index(tuple(k - 1 for k in ks), (self.side,) * self.dim)) + 1

    @property
    def center(self):
        return np.full(self.dim, self.spacing * (self.side + 1) / 2.0)


def lattice_point(lat, j):
    """Coordinates of the 1-based lattice index ``j``."""
    return tuple(lat.spacing * k for k in lat.multi_index(j))


# --------------------------------------------------------------------------
# targets

@dataclass(frozen=True)
class Target:
    """Complex scatterer strengths on the lattice; ``support`` holds 0-based columns."""

    nu: np.ndarray
    support: tuple = field(default=None)

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=complex).copy()
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        if self.support is None:
            supp = tuple(int(k) for k in np.flatnonzero(nu))
        else:
            supp = tuple(sorted(int(k) for k in self.support))
            off = np.ones(nu.size, dtype=bool)
            off[list(supp)] = False
            if np.any(nu[off] != 0):
                raise DomainError("target has nonzero strength off its declared support")
        object.__setattr__(self, "support", supp)

    @property
    def m(self):
        return self.nu.size

    @property
    def s(self):
        return len(self.support)

    @property
    def idx(self):
        return np.array(self.support, dtype=int)

    @property
    def nu_s(self):
        """Strengths restricted to the support, in support order."""
        return self.nu[self.idx]

    @classmethod
    def from_support(cls, m, support, values):
        nu = np.zeros(m, dtype=complex)
        nu[np.asarray(support, dtype=int)] = values
        return cls(nu, tuple(support))

    def scaled(self, factor):
        return Target(self.nu * factor, self.support)


def draw_target(lat, s, amplitude=1.0, seed=0):
    """Random s-sparse target: uniform support without replacement, uniform phases.

    ``amplitude`` is a constant magnitude or a callable ``(rng, s) -> magnitudes``.
    """
    m = lat.m if isinstance(lat, Lattice) else int(lat)
    if not 1 <= s <= m:
        raise DomainError(f"sparsity {s} must lie in 1..{m}")
    rng = rng_from(seed)
    support = np.sort(rng.choice(m, size=s, replace=False))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=s)
    if callable(amplitude):
        mags = np.asarray(amplitude(rng, s), dtype=float)
    else:
        mags = np.full(s, float(amplitude))
    return Target.from_support(m, support, mags * np.exp(1j * phases))


# --------------------------------------------------------------------------
# angle densities

@dataclass(frozen=True)
class AngleDensity:
    """Probability density on [-pi, pi] with support on finitely many intervals.

    ``pdf`` is vectorised and must vanish outside ``intervals``;
    ``smoothness`` is the Holder/C^h degree carried as metadata only.
    """

    pdf: object
    intervals: tuple
    smoothness: float = 0
    name: str = "custom"

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if not (-np.pi - 1e-12 <= a < b <= np.pi + 1e-12):
                raise DomainError(f"support interval ({a}, {b}) outside [-pi, pi]")
        object.__setattr__(self, "intervals", ivs)

    def __call__(self, theta):
        return self.pdf(np.asarray(theta, dtype=float))

    def mass(self):
        return sum(integrate.quad(self.pdf, a, b, limit=200, epsabs=1e-13, epsrel=1e-13)[0]
                   for a, b in self.intervals)

    def cdf(self, theta):
        """Exact CDF by quadrature (slow; used for validation)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.zeros_like(theta)
        for i, t in enumerate(theta):
            acc = 0.0
            for a, b in self.intervals:
                if t > a:
                    acc += integrate.quad(self.pdf, a, min(t, b), limit=200, epsabs=1e-13)[0]
            out[i] = acc
        return out

    @classmethod
    def uniform(cls, a=-np.pi, b=np.pi):
        w = 1.0 / (b - a)

        def pdf(t):
            t = np.asarray(t, dtype=float)
            return np.where((t >= a) & (t <= b), w, 0.0)

        return cls(pdf, ((a, b),), smoothness=np.inf if (a, b) == (-np.pi, np.pi) else 0,
                   name=f"uniform[{a:.6g},{b:.6g}]")

    @classmethod
    def bump(cls, center, halfwidth, h=2):
        """C^h density c * (1 - t^2)^(h+1), t = (theta - center) / halfwidth."""
        if halfwidth <= 0:
            raise DomainError("bump halfwidth must be positive")
        a, b = center - halfwidth, center + halfwidth
        if a < -np.pi - 1e-12 or b > np.pi + 1e-12:
            raise DomainError("bump must fit inside [-pi, pi]")
        k = h + 1
        # integral of (1 - t^2)^k over [-1, 1]
        norm = math.sqrt(math.pi) * math.gamma(k + 1) / math.gamma(k + 1.5) * halfwidth

        def pdf(t):
            u = (np.asarray(t, dtype=float) - center) / halfwidth
            return np.where(np.abs(u) < 1.0, np.clip(1.0 - u * u, 0.0, None) ** k / norm, 0.0)

        return cls(pdf, ((a, b),), smoothness=h, name=f"bump[{center:.6g}+-{halfwidth:.6g},h={h}]")

    def validate(self, tol=1e-10):
        total = self.mass()
        if not np.isfinite(total) or abs(total - 1.0) > tol:
            raise DomainError(f"density integrates to {total}, not 1")
        return total


def _cdf_table(f):
    lengths = np.array([b - a for a, b in f.intervals])
    counts = np.maximum(2, np.round(CDF_KNOTS * lengths / lengths.sum()).astype(int))
    knots, cum = [], []
    acc = 0.0
    for (a, b), c in zip(f.intervals, counts):
        x = np.linspace(a, b, c)
        y = f(x)
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise DomainError("density must be finite and nonnegative")
        part = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))])
        knots.append(x)
        cum.append(acc + part)
        acc += part[-1]
    if not acc > 0 or not np.isfinite(acc):
        raise DomainError("density is not normalizable")
    return np.concatenate(knots), np.concatenate(cum) / acc


def draw_angles(n, f, seed=0):
    """n i.i.d. angles from density f by inverse CDF on a tabulated cumulative."""
    if n < 1:
        raise DomainError("need at least one angle")
    knots, cdf = _cdf_table(f)
    u = rng_from(seed).uniform(0.0, 1.0, size=n)
    return np.interp(u, cdf, knots)


@dataclass(frozen=True)
class SphereDensity:
    """Density of directions on S^2 with respect to d(theta) d(phi).

    theta in [-pi/2, pi/2] is the elevation, phi in [-pi, pi] the azimuth
    (see :func:`sphere_direction`). ``bound`` must dominate ``pdf`` (rejection sampling).
    """

    pdf: object
    bound: float
    smoothness: float = 1
    name: str = "custom"

    def __call__(self, theta, phi):
        return self.pdf(np.asarray(theta, dtype=float), np.asarray(phi, dtype=float))

    @classmethod
    def uniform(cls):
        return cls(lambda t, p: np.cos(t) / (4 * np.pi) + 0 * p, 1 / (4 * np.pi), np.inf, "uniform-sphere")

    @classmethod
    def tilted(cls, a=0.5):
        """C^1 non-uniform density proportional to cos(theta) (1 + a sin(theta) cos(phi))."""
        if not 0 <= a < 1:
            raise DomainError("tilt must lie in [0, 1)")
        return cls(lambda t, p: np.cos(t) * (1 + a * np.sin(t) * np.cos(p)) / (4 * np.pi),
                   (1 + a) / (4 * np.pi), 1, f"tilted-sphere[{a}]")

    def sample(self, n, seed=0):
        """n i.i.d. (theta, phi) pairs by rejection from the uniform box."""
        rng = rng_from(seed)
        out = np.empty((0, 2))
        while out.shape[0] < n:
            k = 2 * (n - out.shape[0]) + 16
            t = rng.uniform(-np.pi / 2, np.pi / 2, k)
            p = rng.uniform(-np.pi, np.pi, k)
            keep = rng.uniform(0, self.bound, k) < self(t, p)
            out = np.vstack([out, np.column_stack([t[keep], p[keep]])])
        return out[:n]


def sphere_direction(theta, phi):
    """Unit vector (cos t cos p, cos t sin p, sin t)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(np.abs(theta) > np.pi / 2 + 1e-12) or np.any(np.abs(phi) > np.pi + 1e-12):
        raise DomainError("sphere_direction needs theta in [-pi/2, pi/2], phi in [-pi, pi]")
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def plane_direction(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


# --------------------------------------------------------------------------
# blind spots

def _wrap(theta):
    """Map angles to (-pi, pi]."""
    t = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(t <= -np.pi + BLIND_SPOT_TOL, np.pi, t)


def blind_spots(lat_or_points):
    """Sorted array of Blind Spots: directions (and antipodes) of all pairwise differences.

    Accepts a 2D :class:`Lattice` or an (m, 2) array of points.
    """
    if isinstance(lat_or_points, Lattice):
        if lat_or_points.dim != 2:
            raise DomainError("Blind Spots are defined for 2D lattices")
        pts = lat_or_points.points
    else:
        pts = np.asarray(lat_or_points, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        return np.empty(0)
    i, j = np.triu_indices(pts.shape[0], k=1)
    diff = pts[i] - pts[j]
    ang = np.arctan2(diff[:, 1], diff[:, 0])
    ang = np.sort(_wrap(np.concatenate([ang, ang + np.pi])))
    keep = np.concatenate([[True], np.diff(ang) > BLIND_SPOT_TOL])
    ang = ang[keep]
    if ang.size > 1 and ang[0] + 2 * np.pi - ang[-1] <= BLIND_SPOT_TOL:
        ang = ang[:-1]
    return ang


def interval_free_of_blind_spots(spots, a, b):
    return not np.any((spots > a) & (spots < b))


# --------------------------------------------------------------------------
# sensors

FAR_2D = "far-field-2D"
FAR_3D = "far-field-3D"
NEAR = "near-field"
SENSOR_KINDS = (FAR_2D, FAR_3D, NEAR)


@dataclass(frozen=True)
class SensorSet:
    """Measurement geometry.

    far-field-2D: ``incident_angles`` (p,), ``sampling_angles`` (n,).
    far-field-3D: the same as (p, 2) / (n, 2) arrays of (theta, phi) pairs.
    near-field: ``sensor_points`` (n, dim) on the plane z = z0, with
    ``aperture`` L and standoff ``delta_min``.
    """

    kind: str
    incident_angles: np.ndarray = field(default_factory=lambda: np.empty(0))
    sampling_angles: np.ndarray = field(default_factory=lambda: np.empty(0))
    sensor_points: np.ndarray = None
    aperture: float = None
    delta_min: float = None

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise DomainError(f"unknown sensor kind {self.kind!r}")
        for name in ("incident_angles", "sampling_angles"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if self.kind == FAR_3D and arr.size:
                arr = arr.reshape(-1, 2)
            object.__setattr__(self, name, arr)
        if self.kind == NEAR:
            if self.sensor_points is None or len(self.sensor_points) < 1:
                raise DomainError("near-field sensor set needs points")
            object.__setattr__(self, "sensor_points", np.atleast_2d(np.asarray(self.sensor_points, float)))
        elif len(self.sampling_angles) < 1:
            raise DomainError("far-field sensor set needs at least one sampling angle")

    @property
    def n(self):
        return len(self.sensor_points) if self.kind == NEAR else len(self.sampling_angles)

    @property
    def p(self):
        return len(self.incident_angles)

    def incident_directions(self):
        if self.kind == FAR_3D:
            return sphere_direction(self.incident_angles[:, 0], self.incident_angles[:, 1])
        return plane_direction(self.incident_angles)

    def sampling_directions(self):
        if self.kind == FAR_3D:
            return sphere_direction(self.sampling_angles[:, 0], self.sampling_angles[:, 1])
        return plane_direction(self.sampling_angles)


def nearfield_plane_height(lat, delta_min):
    """Depth coordinate of the sensor line/plane at standoff delta_min above the first row."""
    return lat.spacing - delta_min


def draw_nearfield_sensors(lat, n, aperture, delta_min, seed=0):
    """Sensors i.i.d. uniform on the aperture (segment or square) centred over the lattice."""
    if aperture <= 0 or delta_min <= 0:
        raise DomainError("aperture and standoff must be positive")
    rng = rng_from(seed)
    c = lat.center
    lateral = c[:-1] + rng.uniform(-aperture / 2, aperture / 2, size=(n, lat.dim - 1))
    depth = np.full((n, 1), nearfield_plane_height(lat, delta_min))
    return SensorSet(NEAR, sensor_points=np.hstack([lateral, depth]), aperture=aperture,
                     delta_min=delta_min)


def delta_max(lat, aperture, delta_min):
    """Largest aperture-to-lattice distance used in the near-field coherence bound."""
    w = lat.width
    if lat.dim == 2:
        return math.sqrt(0.25 * (aperture + w) ** 2 + (delta_min + w) ** 2)
    return math.sqrt(0.5 * (aperture + w) ** 2 + (delta_min + w) ** 2)


# --------------------------------------------------------------------------
# scene files

def _fmt(x):
    return repr(float(x))


def _fmt_list(arr):
    return " ".join(_fmt(v) for v in np.asarray(arr, dtype=float).ravel())


def write_scene(path, lat, target=None, sensors=None):
    """Write a plain-text scene file.

    Layout::

        [lattice]     spacing = ..., side = ..., dim = ...
        [target]      one row per scatterer: "j re im" (1-based lattice index)
        [sensors]     kind = ...; incident_angles / sampling_angles are
                      whitespace lists (3D: flattened theta phi pairs);
                      near-field adds aperture, delta_min and rows
                      "point c1 ... cd"
    """
    lines = ["# scatter-cs scene v1", "[lattice]", f"spacing = {_fmt(lat.spacing)}",
             f"side = {lat.side}", f"dim = {lat.dim}", ""]
    if target is not None:
        lines += ["[target]", "# j re im"]
        for k in target.support:
            v = target.nu[k]
            lines.append(f"{k + 1} {_fmt(v.real)} {_fmt(v.imag)}")
        lines.append("")
    if sensors is not None:
        lines += ["[sensors]", f"kind = {sensors.kind}"]
        if sensors.kind == NEAR:
            lines += [f"aperture = {_fmt(sensors.aperture)}", f"delta_min = {_fmt(sensors.delta_min)}"]
            lines += ["point " + _fmt_list(pt) for pt in sensors.sensor_points]
        else:
            lines += [f"incident_angles = {_fmt_list(sensors.incident_angles)}",
                      f"sampling_angles = {_fmt_list(sensors.sampling_angles)}"]
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def read_scene(path):
    """Inverse of :func:`write_scene`; returns (lattice, target or None, sensors or None)."""
    sections = {}
    current = None
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections[current] = ([], {})
                continue
            if current is None:
                raise ConfigError(f"{path}: content before first section")
            rows, keys = sections[current]
            if "=" in line:
                k, v = line.split("=", 1)
                keys[k.strip()] = v.strip()
            else:
                rows.append(line.split())
    if "lattice" not in sections:
        raise ConfigError(f"{path}: missing [lattice] section")
    try:
        lk = sections["lattice"][1]
        lat = Lattice(float(lk["spacing"]), int(lk["side"]), int(lk.get("dim", 2)))
        target = None
        if "target" in sections:
            rows = sections["target"][0]
            idx = [int(r[0]) - 1 for r in rows]
            vals = [complex(float(r[1]), float(r[2])) for r in rows]
            target = Target.from_support(lat.m, idx, vals)
        sensors = None
        if "sensors" in sections:
            rows, keys = sections["sensors"]
            kind = keys["kind"]
            if kind == NEAR:
                pts = [[float(v) for v in r[1:]] for r in rows if r[0] == "point"]
                sensors = SensorSet(NEAR, sensor_points=np.array(pts), aperture=float(keys["aperture"]),
                                    delta_min=float(keys["delta_min"]))
            else:
                parse = lambda s: np.array([float(v) for v in s.split()]) if s else np.empty(0)
                sensors = SensorSet(kind, parse(keys.get("incident_angles", "")),
                                    parse(keys.get("sampling_angles", "")))
    except (KeyError, ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed scene file ({exc})") from exc
    return lat, target, sensors
