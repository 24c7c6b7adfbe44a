"""Sparsity, coherence and spectral-norm bounds evaluated for a configuration."""
from dataclasses import asdict, dataclass
import math

from ..recover import stability_bounds
from ..scene import Lattice
from ..sensing import chi, coherence_bound_prediction, k_from_delta

OP_LIMIT = 1.0 / (4.0 * math.exp(0.25))


@dataclass
class TheoryReport:
    m: int
    n: int
    p: int
    s: int
    omega: float
    K: float
    delta: float
    tau: float
    m2_holds: bool                 # m <= (delta/8) exp(K^2/2)
    mu: float
    spark3: float                  # 1/2 (1 + 1/mu)
    chi_i: float
    chi_s: float
    mu_prediction: float           # (chi_i + sqrt2 K/sqrt p)(chi_s + sqrt2 K/sqrt n)
    spark4: float                  # 1/2 + 1/(2 prediction)
    spark_tropp: float             # (8 ln(m/tau))^-1 prediction^-2
    hf: float                      # sqrt(np) / (4 K^2)
    M_holds: bool
    q: float                       # inf when s = 1
    op_lhs: float
    op_holds: bool
    tropp_probability: float       # 1 - 2 tau - s^-q
    norm2_sq: float
    norm_bound: float              # 2m
    norm_bound_holds: bool
    spectral_prob_base: float      # sqrt((np - 1)/m); probability is (1 - c1 * base)^exponent
    spectral_prob_exponent: int
    stability: object = None

    def as_dict(self):
        d = asdict(self)
        if self.stability is not None:
            d["stability"] = asdict(self.stability)
        return d


def theory_bounds(cfg, measured_mu, measured_norm, chi_i=None, chi_s=None, target=None):
    """Evaluate the bounds for the first sweep entries (omega[0], s[0], eps[0]).

    ``measured_norm`` is the spectral norm ||Phi||_2 (not squared). chi values
    are computed from the configured densities unless supplied.
    """
    m, n, p = cfg.m, cfg.n, cfg.p
    s, omega = cfg.s[0], cfg.omega[0]
    lat = Lattice(cfg.spacing, cfg.side, cfg.dim)
    if chi_i is None or chi_s is None:
        f_i, f_s = cfg.densities()
        chi_i = chi(lat, f_i, omega) if chi_i is None else chi_i
        chi_s = chi(lat, f_s, omega) if chi_s is None else chi_s
    K = k_from_delta(m, cfg.delta)
    pred = coherence_bound_prediction(chi_i, chi_s, K, n, p)
    log_mt = math.log(m / cfg.tau)
    spark3 = 0.5 * (1 + 1 / measured_mu) if measured_mu > 0 else math.inf
    # q ln s = ln(m/tau) / (72 sqrt(e)) whatever s is, so the first operator-condition term
    # is the constant 1/(4 e^(1/4)); the s = 1 branch uses that limit.
    if s > 1:
        q = (math.log(m) - math.log(cfg.tau)) / (72 * math.sqrt(math.e) * math.log(s))
        op_lhs = 3 * math.sqrt(q * math.log(s) / (2 * log_mt)) + s * measured_norm ** 2 / (m * n * p)
        tropp_prob = 1 - 2 * cfg.tau - s ** (-q)
    else:
        q, tropp_prob = math.inf, 1 - 2 * cfg.tau
        op_lhs = 3 * math.sqrt(1 / (144 * math.sqrt(math.e))) + measured_norm ** 2 / (m * n * p)
    pairs = n * (n - 1) * p * (p - 1) if p > 1 else n * (n - 1)
    base = math.sqrt((n * p - 1) / m) if p > 1 else math.sqrt((n - 1) / m)
    stab = None
    if target is not None:
        stab = stability_bounds(target, lat, omega, cfg.eps[0])
    return TheoryReport(
        m=m, n=n, p=p, s=s, omega=omega, K=K, delta=cfg.delta, tau=cfg.tau,
        m2_holds=m <= cfg.delta / 8 * math.exp(K * K / 2) * (1 + 1e-12),
        mu=measured_mu, spark3=spark3, chi_i=chi_i, chi_s=chi_s, mu_prediction=pred,
        spark4=0.5 + 0.5 / pred, spark_tropp=1 / (8 * log_mt * pred ** 2),
        hf=math.sqrt(n * p) / (4 * K * K),
        M_holds=measured_mu ** 2 * s <= 1 / (8 * log_mt),
        q=q, op_lhs=op_lhs, op_holds=op_lhs <= OP_LIMIT, tropp_probability=tropp_prob,
        norm2_sq=measured_norm ** 2, norm_bound=2.0 * m, norm_bound_holds=measured_norm ** 2 <= 2.0 * m,
        spectral_prob_base=base, spectral_prob_exponent=pairs, stability=stab)
