"""Sparse recovery (OMP, basis pursuit, BPDN, brute-force L0) and strength inversion.

All solvers work natively over complex vectors: the L1 norm is the sum of
moduli and soft-thresholding shrinks magnitudes while keeping phases.
"""
from dataclasses import dataclass, field
from itertools import combinations
import math

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, DegenerateMatrixError, DomainError, InfeasibleError
from .forward import PointSource, coupling_matrix, gv_norm, support_coupling
from .sensing import SensingMatrix, spectral_norm

TROPP_CONST = 3.0 + math.sqrt(1.5)
ZERO_DENOMINATOR = 1e-12
MAX_ITER = 100_000


@dataclass
class RecoveryResult:
    x_hat: np.ndarray
    support_hat: tuple
    residual_2: float
    iterations: int
    converged: bool
    method: str = ""
    info: dict = field(default_factory=dict)


def _mat(phi):
    return phi.entries if isinstance(phi, SensingMatrix) else np.asarray(phi, dtype=complex)


def default_threshold(x):
    return 1e-6 * float(np.max(np.abs(x))) if np.size(x) else 0.0


def support_of(x, threshold=None):
    thr = default_threshold(x) if threshold is None else threshold
    return tuple(int(k) for k in np.flatnonzero(np.abs(x) > thr))


def soft_threshold(v, t):
    """Complex soft-threshold: shrink |v| by t, keep the phase."""
    mag = np.abs(v)
    scale = np.where(mag > t, 1.0 - t / np.where(mag > 0, mag, 1.0), 0.0)
    return v * scale


def _result(A, y, x, iterations, converged, method, **info):
    return RecoveryResult(x, support_of(x), float(np.linalg.norm(y - A @ x)), iterations, converged,
                          method, info)


def _lstsq_on(A, y, cols, rcond=1e-10):
    As = A[:, cols]
    sv = np.linalg.svd(As, compute_uv=False)
    if sv.size == 0 or sv[-1] <= rcond * sv[0] or As.shape[0] < As.shape[1]:
        raise DegenerateMatrixError(f"rank-deficient active set {list(cols)}")
    return np.linalg.lstsq(As, y, rcond=None)[0]


# --------------------------------------------------------------------------
# OMP

def omp(phi, y, s_max, tol=1e-10):
    """Orthogonal Matching Pursuit with least-squares refit on the active set."""
    A = _mat(phi)
    y = np.asarray(y, dtype=complex)
    m = A.shape[1]
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise DegenerateMatrixError("matrix has a zero column")
    x = np.zeros(m, dtype=complex)
    ynorm = np.linalg.norm(y)
    if ynorm == 0:
        return RecoveryResult(x, (), 0.0, 0, True, "omp")
    active = []
    r = y.copy()
    it = 0
    for it in range(1, min(s_max, m) + 1):
        corr = np.abs(A.conj().T @ r) / norms
        corr[active] = -1.0
        active.append(int(np.argmax(corr)))
        coef = _lstsq_on(A, y, active)
        x[:] = 0
        x[active] = coef
        r = y - A @ x
        if np.linalg.norm(r) <= tol * ynorm:
            break
    res = float(np.linalg.norm(r))
    return RecoveryResult(x, tuple(sorted(active)), res, it, res <= tol * ynorm, "omp")


# --------------------------------------------------------------------------
# basis pursuit

def _dual_certificate(A, x, cols):
    """Min-norm w with A_S^* w = sign(x_S); returns (w, ||A^* w||_inf)."""
    sgn = x[cols] / np.abs(x[cols])
    w = np.linalg.lstsq(A[:, cols].conj().T, sgn, rcond=None)[0]
    if np.max(np.abs(A[:, cols].conj().T @ w - sgn)) > 1e-9:
        return w, np.inf
    return w, float(np.max(np.abs(A.conj().T @ w)))


def _polish(A, y, z, eq_tol, cert_tol):
    cols = list(support_of(z))
    if not cols or len(cols) > A.shape[0]:
        return None
    try:
        xs = _lstsq_on(A, y, cols)
    except DegenerateMatrixError:
        return None
    x = np.zeros(A.shape[1], dtype=complex)
    x[cols] = xs
    if np.linalg.norm(A @ x - y) > eq_tol or np.any(xs == 0):
        return None
    w, dual_inf = _dual_certificate(A, x, cols)
    if dual_inf > 1.0 + cert_tol:
        return None
    return x, w, dual_inf


def basis_pursuit(phi, y, eq_tol=None, opt_tol=1e-10, max_iter=MAX_ITER, polish=True):
    """min ||z||_1 subject to ||Phi z - y||_2 <= eq_tol, by ADMM.

    The x-step projects onto the affine set {Phi x = y} (SVD pseudo-inverse);
    the z-step is complex soft-thresholding. Whenever the support of z has been
    stable between checks, a least-squares refit on it is accepted if a dual
    certificate ||Phi^* w||_inf <= 1 + 10 opt_tol proves it optimal. The
    dual vector w is returned in ``info["dual"]``.
    """
    A = _mat(phi)
    y = np.asarray(y, dtype=complex)
    m = A.shape[1]
    ynorm = float(np.linalg.norm(y))
    if eq_tol is None:
        eq_tol = 1e-8 * ynorm
    if ynorm == 0:
        return RecoveryResult(np.zeros(m, dtype=complex), (), 0.0, 0, True, "bp")

    U, S, Vh = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(S > S[0] * 1e-12)) if S.size else 0
    U, S, Vh = U[:, :rank], S[:rank], Vh[:rank]
    out_of_range = float(np.linalg.norm(y - U @ (U.conj().T @ y)))
    if out_of_range > eq_tol:
        raise InfeasibleError(f"data residual {out_of_range:.3e} exceeds eq_tol {eq_tol:.3e}")
    x_ls = Vh.conj().T @ ((U.conj().T @ y) / S)

    def dual_of(u):
        # rho*u lies in the row space of A and in the subdifferential of ||z||_1
        return U @ ((Vh @ (rho * u)) / S)

    def project(v):
        return v - Vh.conj().T @ (Vh @ v) + x_ls

    scale = float(np.max(np.abs(x_ls))) or 1.0
    rho = 1.0 / scale
    z = np.zeros(m, dtype=complex)
    u = np.zeros(m, dtype=complex)
    x = x_ls
    last_support = None
    cert_tol = 10 * opt_tol
    it = 0
    for it in range(1, max_iter + 1):
        x = project(z - u)
        z_old = z
        z = soft_threshold(x + u, 1.0 / rho)
        u = u + x - z
        if it % 25 == 0:
            r_pri = np.linalg.norm(x - z)
            r_dual = rho * np.linalg.norm(z - z_old)
            if polish:
                supp = support_of(z)
                if supp == last_support:
                    got = _polish(A, y, z, eq_tol, cert_tol)
                    if got is not None:
                        xp, w, dual_inf = got
                        return _result(A, y, xp, it, True, "bp", polished=True, dual=w, dual_inf=dual_inf)
                last_support = supp
            if (np.linalg.norm(z - z_old) <= opt_tol * max(np.linalg.norm(z), 1e-300)
                    and np.linalg.norm(A @ z - y) <= eq_tol):
                return _result(A, y, z, it, True, "bp", polished=False, dual=dual_of(u))
            # residual balancing
            if r_pri > 10 * r_dual:
                rho *= 2.0
                u /= 2.0
            elif r_dual > 10 * r_pri:
                rho /= 2.0
                u *= 2.0
    if np.linalg.norm(A @ x - y) <= eq_tol:
        return _result(A, y, x, it, False, "bp", polished=False, dual=dual_of(u))
    raise ConvergenceError("basis pursuit hit the iteration cap without meeting the constraint")


# --------------------------------------------------------------------------
# BPDN / lasso

def lasso_objective(A, y, z, lam):
    r = y - A @ z
    return 0.5 * float(np.real(np.vdot(r, r))) + lam * float(np.sum(np.abs(z)))


def _lasso_polish(A, y, z, lam, sweeps=50):
    cols = list(support_of(z, threshold=0.0))
    if not cols or len(cols) > A.shape[0]:
        return None
    As = A[:, cols]
    H = As.conj().T @ As
    b = As.conj().T @ y
    try:
        cho = linalg.cho_factor(H)
    except linalg.LinAlgError:
        return None
    zs = z[cols]
    for _ in range(sweeps):
        sgn = zs / np.abs(zs)
        new = linalg.cho_solve(cho, b - lam * sgn)
        if np.any(np.abs(new) == 0) or np.any(np.real(np.conj(new) * zs) <= 0):
            return None
        done = np.max(np.abs(new - zs)) <= 1e-15 * max(np.max(np.abs(new)), 1e-300)
        zs = new
        if done:
            break
    x = np.zeros(A.shape[1], dtype=complex)
    x[cols] = zs
    g = A.conj().T @ (y - A @ x)
    # KKT: |g_j| <= lam off the support, g_S = lam * sign(x_S) on it
    off = np.ones(A.shape[1], dtype=bool)
    off[cols] = False
    if np.any(np.abs(g[off]) > lam * (1 + 1e-9)):
        return None
    if np.max(np.abs(g[cols] - lam * zs / np.abs(zs))) > 1e-8 * lam:
        return None
    return x


def bpdn(phi, y, lam, opt_tol=1e-12, max_iter=MAX_ITER, polish=True, lipschitz=None):
    """min 1/2 ||y - Phi z||^2 + lam ||z||_1 by accelerated proximal gradient.

    FISTA with function-value restarts (a restart whenever the objective would
    increase, so the accepted sequence is monotone); step 1/L with L the
    power-iteration estimate of ||Phi||_2^2. A final KKT-verified refit on the
    detected support removes the residual iteration error.
    """
    if lam <= 0:
        raise DomainError("lambda must be positive (use basis_pursuit for lambda = 0)")
    A = _mat(phi)
    y = np.asarray(y, dtype=complex)
    m = A.shape[1]
    L = lipschitz if lipschitz is not None else spectral_norm(A) ** 2 * (1 + 1e-8)
    if L == 0:
        return RecoveryResult(np.zeros(m, complex), (), float(np.linalg.norm(y)), 0, True, "bpdn")
    Ah = A.conj().T
    x = np.zeros(m, dtype=complex)
    v = x.copy()
    t = 1.0
    F = lasso_objective(A, y, x, lam)
    stall = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        x_new = soft_threshold(v + Ah @ (y - A @ v) / L, lam / L)
        F_new = lasso_objective(A, y, x_new, lam)
        if F_new > F:
            # restart momentum from the last accepted point
            t = 1.0
            v = x
            x_new = soft_threshold(x + Ah @ (y - A @ x) / L, lam / L)
            F_new = lasso_objective(A, y, x_new, lam)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        v = x_new + ((t - 1) / t_new) * (x_new - x)
        change = abs(F - F_new)
        x, F, t = x_new, min(F_new, F) if F_new <= F else F_new, t_new
        stall = stall + 1 if change <= opt_tol * max(F, 1e-300) else 0
        if stall >= 5:
            converged = True
            break
    if not converged and it >= max_iter:
        raise ConvergenceError("BPDN hit the iteration cap")
    info = {"objective": F, "polished": False}
    if polish and np.any(x != 0):
        xp = _lasso_polish(A, y, x, lam)
        if xp is not None and lasso_objective(A, y, xp, lam) <= F + 1e-12 * max(F, 1.0):
            x = xp
            info = {"objective": lasso_objective(A, y, xp, lam), "polished": True}
    return _result(A, y, x, it, converged, "bpdn", **info)


# --------------------------------------------------------------------------
# brute-force L0 oracle

def brute_force_l0(phi, y, s_max, tol=1e-10):
    """Smallest support (size <= s_max) whose least-squares fit meets the residual tolerance."""
    A = _mat(phi)
    y = np.asarray(y, dtype=complex)
    m = A.shape[1]
    if m > 24 or s_max > 4:
        raise DomainError("brute force restricted to m <= 24 and s_max <= 4")
    ynorm = np.linalg.norm(y)
    if ynorm == 0:
        return RecoveryResult(np.zeros(m, complex), (), 0.0, 0, True, "l0")
    count = 0
    for k in range(1, s_max + 1):
        best = None
        for cols in combinations(range(m), k):
            count += 1
            As = A[:, cols]
            coef, *_ = np.linalg.lstsq(As, y, rcond=None)
            res = np.linalg.norm(y - As @ coef)
            if res <= tol * ynorm and (best is None or res < best[0]):
                best = (res, cols, coef)
        if best is not None:
            x = np.zeros(m, dtype=complex)
            x[list(best[1])] = best[2]
            return RecoveryResult(x, tuple(best[1]), float(best[0]), count, True, "l0")
    raise InfeasibleError(f"no support of size <= {s_max} fits the data")


# --------------------------------------------------------------------------
# strength inversion

@dataclass
class StrengthEstimate:
    nu_hat: np.ndarray
    denominator: np.ndarray
    support: tuple
    well_defined: bool


def invert_strengths(x_hat, lat, omega, incident, threshold=0.0):
    """nu_j = x_j / (u^i(r_j) + w^2 (G x)_j) on the active set {|x_j| > threshold}.

    G is the zero-diagonal Green matrix between active sites. A (near-)zero
    denominator is reported through ``well_defined`` rather than raised.
    """
    x = np.asarray(x_hat, dtype=complex)
    if x.size != lat.m:
        raise DomainError("x_hat must live on the lattice")
    active = np.flatnonzero(np.abs(x) > threshold)
    nu = np.zeros(lat.m, dtype=complex)
    if active.size == 0:
        return StrengthEstimate(nu, np.empty(0, complex), (), True)
    pts = lat.points[active]
    G = coupling_matrix(pts, omega, lat.dim, lat.spacing)
    den = np.asarray(incident(pts, omega), dtype=complex).reshape(-1) + omega ** 2 * (G @ x[active])
    ok = bool(np.min(np.abs(den)) > ZERO_DENOMINATOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu[active] = x[active] / den
    return StrengthEstimate(nu, den, tuple(int(k) for k in active), ok)


def invert_strengths_nearfield(x_hat, lat, omega, r0, threshold=0.0):
    """Point-source analogue: nu_j = x_j / (G(r_j, r0) + w^2 sum_{l != j} x_l G(r_j, r_l))."""
    return invert_strengths(x_hat, lat, omega, PointSource(r0, lat.spacing), threshold)


# --------------------------------------------------------------------------
# stability

@dataclass
class StabilityReport:
    gv_norm: float            # w^2 ||G V||
    g_norm: float             # ||G|| (max row sum, support only)
    v_norm: float             # max |nu_j|
    v_inv_norm: float         # max 1 / |nu_j| on the support
    eps: float
    b0: float = None
    cond_denominator: bool = False
    cond_support: bool = False
    cond_denominator_without_w2: bool = False
    error_bound: float = None
    linf_bound: float = None

    @property
    def defined(self):
        return self.b0 is not None


def stability_bounds(target, lat, omega, eps):
    """Noise-stability quantities for the exact SIMO pipeline.

    b0 = (1 - 2a)/(1 - a) with a = w^2 ||G V|| lower-bounds |u| on the
    support. ``cond_denominator`` is b0 > w^2 c ||G|| (c = (3 + sqrt(3/2)) eps), which
    makes the reconstruction well defined; ``cond_support`` is b0 > c ||V^-1||,
    which forces the exact support. ``error_bound`` bounds max_j |nu_j - nu_hat_j|.
    """
    if target.s < 1:
        raise DomainError("stability bounds need a nonempty support")
    G = support_coupling(target, lat, omega)
    g_norm = float(np.max(np.sum(np.abs(G), axis=1)))
    a = gv_norm(target, lat, omega)
    mags = np.abs(target.nu_s)
    c = TROPP_CONST * eps
    rep = StabilityReport(a, g_norm, float(mags.max()), float((1.0 / mags).max()), eps,
                          linf_bound=c)
    if a >= 0.5:
        return rep
    b0 = (1 - 2 * a) / (1 - a)
    rep.b0 = b0
    cg = omega ** 2 * c * g_norm
    rep.cond_denominator = bool(b0 > cg)
    rep.cond_denominator_without_w2 = bool(a < (1 - c * g_norm) / (2 - c * g_norm))
    rep.cond_support = bool(b0 > c * rep.v_inv_norm)
    if rep.cond_denominator:
        rep.error_bound = 2 * (1 + omega ** 2 * g_norm * rep.v_norm) * c / (b0 * (b0 - cg))
    return rep


# --------------------------------------------------------------------------
# metrics and CSV rows

@dataclass
class RecoveryMetrics:
    linf: float
    l2: float
    exact_support: bool
    contained: bool
    false_positives: int
    false_negatives: int


def recovery_metrics(x_hat, x_true, support_threshold=None):
    x_hat = np.asarray(x_hat, dtype=complex)
    x_true = np.asarray(x_true, dtype=complex)
    if x_hat.shape != x_true.shape:
        raise DomainError("x_hat and x_true differ in length")
    est = set(support_of(x_hat, support_threshold))
    true = set(int(k) for k in np.flatnonzero(x_true))
    err = x_hat - x_true
    return RecoveryMetrics(float(np.max(np.abs(err))) if err.size else 0.0, float(np.linalg.norm(err)),
                           est == true, est <= true, len(est - true), len(true - est))


RESULT_CSV_FIELDS = ("trial", "s", "n", "p", "omega", "mu", "residual", "linf_error",
                     "exact_support", "support_contained", "iterations")


def result_csv_row(trial, s, n, p, omega, mu, result, metrics):
    return {"trial": trial, "s": s, "n": n, "p": p, "omega": repr(float(omega)), "mu": repr(float(mu)),
            "residual": repr(result.residual_2), "linf_error": repr(metrics.linf),
            "exact_support": int(metrics.exact_support), "support_contained": int(metrics.contained),
            "iterations": result.iterations}
