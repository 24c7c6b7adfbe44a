"""Monte Carlo drivers. Each returns an :class:`ExperimentResult` (rows + summary).

Trials are independent tasks seeded by ``trial_seed(master, t)``; a thread
pool maps them in order, so output does not depend on the worker count.
Trial indices continue across sweep points so that every (sweep, trial)
pair gets its own seed.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import math

import numpy as np

from ..errors import ConvergenceError, DegenerateMatrixError, ResonanceError
from ..forward import (PlaneWave, find_pair_resonance, foldy_lax_solve, reciprocity_residual,
                       resonance_spectrum, scattering_amplitude, target_vector)
from ..recover import (TROPP_CONST, basis_pursuit, bpdn, invert_strengths, omp, recovery_metrics,
                       stability_bounds, support_of)
from ..scene import (Lattice, SphereDensity, draw_angles, draw_nearfield_sensors, draw_target,
                     plane_direction, rng_from, sphere_direction, trial_seed)
from ..sensing import (build_dt_nearfield, build_mimo_born, build_simo_farfield, chi, coherence,
                       coherence_bound_prediction, dt_bound_shape, k_from_delta)
from ..specfun import green_abs_at

EXACT_TOL = 1e-6
SCHEMA = "scatter-cs v1"


@dataclass
class ExperimentResult:
    experiment: str
    fields: tuple
    rows: list
    summary: list = field(default_factory=list)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(result, fh):
    """Header comment, column line, one line per trial, then '# summary' lines."""
    fh.write(f"# {SCHEMA} {result.experiment}\n")
    fh.write(",".join(result.fields) + "\n")
    for row in result.rows:
        fh.write(",".join(_fmt(row.get(k)) for k in result.fields) + "\n")
    for summ in result.summary:
        fh.write("# summary " + " ".join(f"{k}={_fmt(v)}" for k, v in summ.items()) + "\n")


def run_trials(fn, indices, threads=1):
    """Ordered map of ``fn`` over trial indices (thread pool when threads > 1)."""
    indices = list(indices)
    if threads <= 1:
        return [fn(t) for t in indices]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, indices))


def _lattice(cfg):
    return Lattice(cfg.spacing, cfg.side, cfg.dim)


def _draw_directions(f, k, rng):
    if isinstance(f, SphereDensity):
        return f.sample(k, rng)
    return draw_angles(k, f, rng)


def _to_vectors(angles, dim):
    a = np.asarray(angles, dtype=float)
    if dim == 3:
        a = a.reshape(-1, 2)
        return sphere_direction(a[:, 0], a[:, 1])
    return plane_direction(a.reshape(-1))


def _fraction(flags):
    flags = list(flags)
    return sum(flags) / len(flags) if flags else math.nan


def _median(vals):
    vals = [v for v in vals if v is not None and np.isfinite(v)]
    return float(np.median(vals)) if vals else math.nan


# --------------------------------------------------------------------------
# coherence

def mc_coherence(cfg):
    """mu(Phi) of random MIMO Born matrices against the coherence prediction.

    One summary line per omega: pass fraction against (1 - delta)^2 and median mu.
    """
    lat = _lattice(cfg)
    f_i, f_s = cfg.densities()
    K = k_from_delta(cfg.m, cfg.delta)
    fields = ("omega", "trial", "mu", "chi_i", "chi_s", "K", "prediction", "pass")
    rows, summary = [], []
    for w_idx, omega in enumerate(cfg.omega):
        chi_i, chi_s = chi(lat, f_i, omega), chi(lat, f_s, omega)
        pred = coherence_bound_prediction(chi_i, chi_s, K, cfg.n, cfg.p)

        def trial(t, omega=omega, chi_i=chi_i, chi_s=chi_s, pred=pred):
            rng = rng_from(trial_seed(cfg.seed, t))
            thetas = _draw_directions(f_i, cfg.p, rng)
            tt = _draw_directions(f_s, cfg.n, rng)
            mu = coherence(build_mimo_born(lat, thetas, tt, omega))
            return {"omega": omega, "trial": t, "mu": mu, "chi_i": chi_i, "chi_s": chi_s, "K": K,
                    "prediction": pred, "pass": mu < pred}

        block = run_trials(trial, range(w_idx * cfg.trials, (w_idx + 1) * cfg.trials), cfg.threads)
        rows += block
        summary.append({"omega": omega, "trials": len(block),
                        "pass_fraction": _fraction(r["pass"] for r in block),
                        "target": (1 - cfg.delta) ** 2, "median_mu": _median(r["mu"] for r in block),
                        "prediction": pred})
    return ExperimentResult("mc-coherence", fields, rows, summary)


# --------------------------------------------------------------------------
# shared scene simulation

def simulate_scene(cfg, lat, s, omega, rng):
    """Draw sensors and an s-sparse target, then synthesize noise-free data.

    Born model: MIMO matrix, X = nu. Exact model: one incident wave (SIMO),
    X = nu u from Foldy-Lax and Y = (4 pi / w^2) A(rhat). Raises
    :class:`ResonanceError` on resonant draws.
    """
    f_i, f_s = cfg.densities()
    if cfg.model == "born":
        thetas = _draw_directions(f_i, cfg.p, rng)
        tt = _draw_directions(f_s, cfg.n, rng)
        phi = build_mimo_born(lat, thetas, tt, omega)
        target = draw_target(lat, s, cfg.amplitude, rng)
        X = target.nu.astype(complex)
        return {"phi": phi, "target": target, "X": X, "Y": phi.entries @ X, "incident": None}
    theta0 = _draw_directions(f_i, 1, rng)
    tt = _draw_directions(f_s, cfg.n, rng)
    phi = build_simo_farfield(lat, tt, omega)
    target = draw_target(lat, s, cfg.amplitude, rng)
    inc = PlaneWave(_to_vectors(theta0, lat.dim)[0])
    U = foldy_lax_solve(target, lat, inc, omega)
    X = target_vector(target, U)
    A = scattering_amplitude(target, U, omega, _to_vectors(tt, lat.dim))
    return {"phi": phi, "target": target, "X": X, "Y": 4 * np.pi / omega ** 2 * A, "incident": inc}


def _restrict(x, threshold=None):
    out = np.zeros_like(x)
    idx = list(support_of(x, threshold))
    out[idx] = x[idx]
    return out


def _exact_recovery(x_hat, X):
    met = recovery_metrics(x_hat, X)
    return met, met.exact_support and met.linf <= EXACT_TOL * float(np.max(np.abs(X)))


# --------------------------------------------------------------------------
# recovery

def mc_recovery(cfg):
    """Exact-recovery rates of BP and OMP against sparsity (phase-transition table)."""
    lat = _lattice(cfg)
    omega = cfg.omega[0]
    fields = ("s", "trial", "skipped", "mu", "spark3", "bp_exact", "bp_linf", "omp_exact", "omp_linf",
              "nu_rel_err", "nu_exact")
    rows, summary = [], []
    for s_idx, s in enumerate(cfg.s):
        def trial(t, s=s):
            rng = rng_from(trial_seed(cfg.seed, t))
            row = {"s": s, "trial": t, "skipped": False}
            try:
                sc = simulate_scene(cfg, lat, s, omega, rng)
            except ResonanceError:
                row["skipped"] = True
                return row
            X, Y, phi = sc["X"], sc["Y"], sc["phi"]
            mu = coherence(phi)
            row.update(mu=mu, spark3=0.5 * (1 + 1 / mu))
            try:
                bp = basis_pursuit(phi, Y)
                met, ok = _exact_recovery(bp.x_hat, X)
                row.update(bp_exact=ok, bp_linf=met.linf)
            except ConvergenceError:
                bp = None
                row.update(bp_exact=False, bp_linf=math.nan)
            try:
                om = omp(phi, Y, s)
                met, ok = _exact_recovery(om.x_hat, X)
                row.update(omp_exact=ok, omp_linf=met.linf)
            except DegenerateMatrixError:
                row.update(omp_exact=False, omp_linf=math.nan)
            if cfg.model == "exact" and bp is not None:
                est = invert_strengths(_restrict(bp.x_hat), lat, omega, sc["incident"])
                nu = sc["target"].nu
                err = float(np.max(np.abs(est.nu_hat - nu)) / np.max(np.abs(nu)))
                same = set(np.flatnonzero(est.nu_hat)) == set(sc["target"].idx.tolist())
                row.update(nu_rel_err=err, nu_exact=bool(est.well_defined and same and err <= EXACT_TOL))
            return row

        block = run_trials(trial, range(s_idx * cfg.trials, (s_idx + 1) * cfg.trials), cfg.threads)
        rows += block
        kept = [r for r in block if not r["skipped"]]
        summ = {"s": s, "trials": len(block), "skipped": len(block) - len(kept),
                "bp_rate": _fraction(r["bp_exact"] for r in kept),
                "omp_rate": _fraction(r["omp_exact"] for r in kept),
                "median_spark3": _median(r["spark3"] for r in kept)}
        if cfg.model == "exact":
            summ["nu_rate"] = _fraction(r.get("nu_exact", False) for r in kept)
        summary.append(summ)
    return ExperimentResult("mc-recovery", fields, rows, summary)


# --------------------------------------------------------------------------
# stability

def complex_noise(n, eps, rng):
    """Complex Gaussian vector rescaled to norm exactly eps sqrt(n)."""
    e = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    if eps == 0:
        return np.zeros(n, dtype=complex)
    return e * (eps * math.sqrt(n) / np.linalg.norm(e))


def stability_trial(cfg, lat, s, omega, eps, rng):
    """One noisy exact-model trial; returns the row dict (or None on resonance)."""
    try:
        sc = simulate_scene(cfg, lat, s, omega, rng)
    except ResonanceError:
        return None
    phi, X, target = sc["phi"], sc["X"], sc["target"]
    n = phi.rows
    Y = sc["Y"] + complex_noise(n, eps, rng)
    if eps > 0:
        res = bpdn(phi, Y, 2 * eps * n)
    else:
        res = basis_pursuit(phi, Y)
    x_hat = _restrict(res.x_hat)
    met = recovery_metrics(x_hat, X)
    mu = coherence(phi)
    rep = stability_bounds(target, lat, omega, eps)
    est = invert_strengths(x_hat, lat, omega, sc["incident"])
    nu = target.nu
    v_err = float(np.max(np.abs(est.nu_hat - nu)))
    hyp = bool(mu * s <= 1 / 3 and rep.cond_denominator and rep.cond_support)
    nu_supp = set(np.flatnonzero(est.nu_hat)) == set(target.idx.tolist())
    return {"eps": eps, "mu": mu, "mu_s": mu * s, "gv_norm": rep.gv_norm, "cond_denominator": rep.cond_denominator,
            "cond_support": rep.cond_support, "hypotheses": hyp, "linf_err": met.linf,
            "linf_bound": TROPP_CONST * eps, "linf_ok": met.linf <= TROPP_CONST * eps,
            "contained": met.contained, "nu_support_equal": nu_supp and est.well_defined,
            "v_err": v_err, "v_bound": rep.error_bound,
            "v_ok": rep.error_bound is not None and v_err <= rep.error_bound}


def mc_stability(cfg):
    """Noisy exact-model pipeline: BPDN with lambda = 2 eps n, then strength inversion."""
    if cfg.model != "exact":
        cfg = replace(cfg, model="exact")
    lat = _lattice(cfg)
    s, omega = cfg.s[0], cfg.omega[0]
    fields = ("eps", "trial", "skipped", "mu", "mu_s", "gv_norm", "cond_denominator", "cond_support", "hypotheses",
              "linf_err", "linf_bound", "linf_ok", "contained", "nu_support_equal", "v_err", "v_bound",
              "v_ok")
    rows, summary = [], []
    for e_idx, eps in enumerate(cfg.eps):
        def trial(t, eps=eps):
            row = stability_trial(cfg, lat, s, omega, eps, rng_from(trial_seed(cfg.seed, t)))
            if row is None:
                return {"eps": eps, "trial": t, "skipped": True}
            row.update(trial=t, skipped=False)
            return row

        block = run_trials(trial, range(e_idx * cfg.trials, (e_idx + 1) * cfg.trials), cfg.threads)
        rows += block
        qual = [r for r in block if not r["skipped"] and r["hypotheses"]]
        summary.append({
            "eps": eps, "trials": len(block), "skipped": sum(r["skipped"] for r in block),
            "qualifying": len(qual),
            "linf_ok_fraction": _fraction(r["linf_ok"] for r in qual),
            "contained_fraction": _fraction(r["contained"] for r in qual),
            "nu_support_fraction": _fraction(r["nu_support_equal"] for r in qual),
            "v_ok_fraction": _fraction(r["v_ok"] for r in qual)})
    return ExperimentResult("mc-stability", fields, rows, summary)


# --------------------------------------------------------------------------
# diffraction tomography

def mc_dt(cfg):
    """Near-field coherence against omega*L, with the bound's constant fit on the first point."""
    lat = _lattice(cfg)
    K = k_from_delta(cfg.m, cfg.delta)
    fields = ("omega", "omegaL", "trial", "mu", "delta_max", "noise_term", "trend_term", "bound")
    rows, summary = [], []
    for w_idx, omega in enumerate(cfg.omega):
        def trial(t, omega=omega):
            rng = rng_from(trial_seed(cfg.seed, t))
            sensors = draw_nearfield_sensors(lat, cfg.n, cfg.aperture, cfg.delta_min, rng)
            mu = coherence(build_dt_nearfield(lat, sensors, omega))
            return {"omega": omega, "omegaL": omega * cfg.aperture, "trial": t, "mu": mu}

        rows.append(run_trials(trial, range(w_idx * cfg.trials, (w_idx + 1) * cfg.trials), cfg.threads))
    # least-squares fit of c on the first sweep point: mu ~ (noise + c t) / |G|^2
    _, noise0, t0, dm0 = dt_bound_shape(lat, cfg.omega[0], cfg.aperture, cfg.delta_min, K, cfg.n, c=1.0)
    g2 = green_abs_at(dm0, cfg.omega[0], lat.dim) ** 2
    mus0 = np.array([r["mu"] for r in rows[0]])
    c = float(np.mean(mus0 * g2 - noise0) / t0)
    flat = []
    for omega, block in zip(cfg.omega, rows):
        bound, noise, trend, dm = dt_bound_shape(lat, omega, cfg.aperture, cfg.delta_min, K, cfg.n, c=c)
        for r in block:
            r.update(delta_max=dm, noise_term=noise, trend_term=trend, bound=bound)
        flat += block
        summary.append({"omega": omega, "omegaL": omega * cfg.aperture, "trials": len(block),
                        "median_mu": _median(r["mu"] for r in block), "bound": bound, "c_fit": c})
    return ExperimentResult("mc-dt", fields, flat, summary)


# --------------------------------------------------------------------------
# reciprocity and resonance

RECIPROCITY_TOL = 1e-10


def reciprocity_check(cfg):
    """|A(rhat, d) - A(-d, -rhat)| / |A| for random targets and direction pairs."""
    lat = _lattice(cfg)
    s, omega = cfg.s[0], cfg.omega[0]
    f_i, f_s = cfg.densities()

    def trial(t):
        rng = rng_from(trial_seed(cfg.seed, t))
        target = draw_target(lat, s, cfg.amplitude, rng)
        d = _to_vectors(_draw_directions(f_i, 1, rng), lat.dim)[0]
        rhat = _to_vectors(_draw_directions(f_s, 1, rng), lat.dim)[0]
        try:
            res = reciprocity_residual(target, lat, omega, d, rhat)
        except ResonanceError:
            return {"trial": t, "skipped": True}
        return {"trial": t, "skipped": False, "residual": res, "pass": res <= RECIPROCITY_TOL}

    rows = run_trials(trial, range(cfg.trials), cfg.threads)
    kept = [r for r in rows if not r["skipped"]]
    summary = [{"trials": len(rows), "skipped": len(rows) - len(kept),
                "pass_fraction": _fraction(r["pass"] for r in kept),
                "max_residual": max((r["residual"] for r in kept), default=math.nan)}]
    return ExperimentResult("reciprocity", ("trial", "skipped", "residual", "pass"), rows, summary)


def resonance_check(cfg):
    """Resonant frequency of two adjacent phase-matched scatterers of magnitude ``amplitude``."""
    lat = _lattice(cfg)
    omega, target = find_pair_resonance(lat, 0, 1, cfg.amplitude, cfg.amplitude)
    dist = float(np.min(np.abs(resonance_spectrum(target, lat, omega) - 1.0)))
    try:
        foldy_lax_solve(target, lat, PlaneWave(_to_vectors([0.0] * (lat.dim - 1), lat.dim)[0]), omega)
        raised = False
    except ResonanceError:
        raised = True
    row = {"omega": omega, "magnitude": cfg.amplitude, "distance_to_one": dist, "solver_raised": raised}
    return ExperimentResult("resonance", tuple(row), [row], [])


DRIVERS = {"mc-coherence": mc_coherence, "mc-recovery": mc_recovery,
           "mc-stability": mc_stability, "mc-dt": mc_dt,
           "reciprocity": reciprocity_check, "resonance": resonance_check}
