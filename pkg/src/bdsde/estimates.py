"""Empirical checks of the a priori estimates and of the existence machinery.

The estimate constants are not explicit, so inequalities are reported as
ratios ``lhs / rhs`` of Monte Carlo means together with a delta-method
standard error.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .exceptions import BDSDEError, ConfigurationError, PreconditionError
from .generators import build_h_n, build_step2_data, step1_radius
from .paths import make_grid, sample_brownian
from .solver import SolverConfig, solve_bdsde

RATIO_FLOOR = 1e-12
NONZERO_Y = 1e-12


@dataclass
class EstimateReport:
    """One estimate evaluated on a solved ensemble.

    ``lhs`` and the entries of ``rhs_terms`` are Monte Carlo means;
    ``ratio = lhs / max(sum(rhs_terms), floor)``.
    """

    lemma_id: str
    lhs: float
    rhs_terms: dict
    ratio: float
    mc_stderr: float
    p: float
    floor: float = RATIO_FLOOR
    steps_N: int = 0

    @property
    def rhs(self):
        return float(sum(self.rhs_terms.values()))

    def to_dict(self):
        return {"lemma_id": self.lemma_id, "p": self.p, "steps_N": self.steps_N,
                "lhs": self.lhs, "rhs": self.rhs, "rhs_terms": dict(self.rhs_terms),
                "ratio": self.ratio, "mc_stderr": self.mc_stderr, "floor": self.floor}


def _data_norms(gen, grid):
    """``|f0(t_i)|`` and ``|g0(t_i)|^2`` on the left nodes ``i = 0..N-1``."""
    f0 = np.array([np.linalg.norm(gen.f0(t, 1)) for t in grid.nodes[:-1]])
    g0 = np.array([np.sum(gen.g0(t, 1) ** 2) for t in grid.nodes[:-1]])
    return f0, g0


def _check_match(sol, gen):
    M, _, k = sol.Y.shape
    if k != gen.dim_k or sol.Z.shape[-1] != gen.dim_d or sol.dB.shape[-1] != gen.dim_l:
        raise ConfigurationError("solution ensemble dimensions do not match the generator")
    if sol.Z.shape[1] != sol.grid.steps_N:
        raise ConfigurationError("Z must have one entry per time step")


def _ratio_report(lemma_id, L, R_parts, p, sol):
    R = sum(R_parts.values())
    lbar, rbar = float(np.mean(L)), float(np.mean(R))
    ratio = lbar / max(rbar, RATIO_FLOOR)
    M = L.shape[0]
    if rbar > RATIO_FLOOR and M > 1:
        se = float(np.std(L - ratio * R, ddof=1) / math.sqrt(M) / rbar)
    else:
        se = 0.0
    terms = {name: float(np.mean(val)) for name, val in R_parts.items()}
    return EstimateReport(lemma_id, lbar, terms, ratio, se, float(p), steps_N=sol.grid.steps_N)


def _path_terms(sol, gen, p):
    dt = sol.grid.dt
    M = sol.Y.shape[0]
    sup_y = np.max(np.linalg.norm(sol.Y, axis=-1), axis=1) ** p
    quad_z = (np.sum(sol.Z**2, axis=(1, 2, 3)) * dt) ** (p / 2)
    f0, g0 = _data_norms(gen, sol.grid)
    f0_term = np.full(M, (np.sum(f0) * dt) ** p)
    g0_term = np.full(M, (np.sum(g0) * dt) ** (p / 2))
    return sup_y, quad_z, f0_term, g0_term, g0


def check_lemma31(sol, gen, p):
    """``E[(int |Z|^2)^{p/2}]`` against ``E[sup|Y|^p + (int|f0|)^p + (int|g0|^2)^{p/2}]``."""
    _check_match(sol, gen)
    sup_y, quad_z, f0_term, g0_term, _ = _path_terms(sol, gen, p)
    return _ratio_report("L31", quad_z, {"supY_term": sup_y, "f0_term": f0_term,
                                         "g0_term": g0_term}, p, sol)


def check_lemma32(sol, gen, p):
    """Full estimate: ``E[sup|Y|^p + (int|Z|^2)^{p/2}]`` against the data terms.

    The mixed term ``int |Y|^{p-2} 1{Y != 0} |g0|^2`` involves the solution
    and is evaluated on the ensemble (``Y != 0`` read as ``|Y| > 1e-12``).
    """
    _check_match(sol, gen)
    sup_y, quad_z, f0_term, g0_term, g0 = _path_terms(sol, gen, p)
    xi_term = np.linalg.norm(sol.Y[:, -1], axis=-1) ** p
    absY = np.linalg.norm(sol.Y[:, :-1], axis=-1)
    nonzero = absY > NONZERO_Y
    weight = np.where(nonzero, np.where(nonzero, absY, 1.0) ** (p - 2), 0.0)
    if np.any(g0 != 0):
        mixed = np.sum(weight * g0[None, :], axis=1) * sol.grid.dt
    else:
        mixed = np.zeros(sol.Y.shape[0])
    parts = {"xi_term": xi_term, "f0_term": f0_term, "g0_term": g0_term, "mixed_g0_term": mixed}
    return _ratio_report("L32", sup_y + quad_z, parts, p, sol)


def ratio_spread(reports):
    """``max / min`` of the ratios (1 when all are zero)."""
    ratios = np.array([r.ratio for r in reports])
    if np.all(ratios == 0):
        return 1.0
    if np.any(ratios <= 0):
        return math.inf
    return float(ratios.max() / ratios.min())


# ------------------------------------------------------ Gaussian moment oracle

def gaussian_abs_moment(q, variance=1.0):
    """``E|X|^q`` for ``X ~ N(0, variance)``; ``inf`` when ``q <= -1``."""
    if q <= -1:
        return math.inf
    return variance ** (q / 2) * 2 ** (q / 2) * special.gamma((q + 1) / 2) / math.sqrt(math.pi)


def truncated_gaussian_moment(q, variance=1.0, eps=0.0):
    """``E[|X|^q ; |X| > eps]`` by adaptive quadrature."""
    sd = math.sqrt(variance)

    def density(x):
        return 2.0 * x**q * math.exp(-0.5 * (x / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

    # the singular piece near 0 is integrated in log-coordinates
    lo = max(eps, 1e-300)
    near, _ = integrate.quad(lambda u: density(math.exp(u)) * math.exp(u), math.log(lo), 0.0,
                             limit=200)
    far, _ = integrate.quad(density, 1.0, math.inf, limit=200)
    return near + far


@dataclass(frozen=True)
class MomentCheck:
    beta_tail: float
    p: float
    p_moment_closed: float
    p_moment_quad: float
    second_moment_truncated: tuple
    p_integrable: bool
    square_integrable: bool


def verify_moment_conditions(beta_tail, p, horizon_T=1.0):
    """Check ``E|xi|^p < inf = E|xi|^2`` for ``xi = |W_T|^{-beta_tail}``.

    The p-th moment is computed in closed form and by quadrature; square
    non-integrability shows as truncated second moments that keep growing
    like ``eps^{1 - 2 beta_tail}`` as the cut-off ``eps`` shrinks.
    """
    q = -beta_tail * p
    closed = gaussian_abs_moment(q, horizon_T)
    quad = truncated_gaussian_moment(q, horizon_T, eps=0.0) if q > -1 else math.inf
    cutoffs = (1e-2, 1e-4, 1e-6, 1e-8)
    second = tuple(truncated_gaussian_moment(-2 * beta_tail, horizon_T, eps) for eps in cutoffs)
    growth = [second[i + 1] / second[i] for i in range(len(second) - 1)]
    square_integrable = not all(g > 1.5 for g in growth)
    p_integrable = math.isfinite(closed) and abs(quad - closed) <= 1e-6 * closed
    return MomentCheck(beta_tail, p, closed, quad, second, p_integrable, square_integrable)


# ------------------------------------------------------------- Cauchy study

def _sp_distance(Ya, Yb, p):
    D = np.max(np.linalg.norm(Ya - Yb, axis=-1), axis=1) ** p
    return _power_mean(D, p)


def _mp_distance(Za, Zb, dt, p):
    D = (np.sum((Za - Zb) ** 2, axis=(1, 2, 3)) * dt) ** (p / 2)
    return _power_mean(D, p)


def _power_mean(D, p):
    """``(mean D)^{min(1, 1/p)}`` and its delta-method standard error."""
    power = min(1.0, 1.0 / p)
    mean = float(np.mean(D))
    se_mean = float(np.std(D, ddof=1) / math.sqrt(D.shape[0])) if D.shape[0] > 1 else 0.0
    value = mean**power
    se = power * mean ** (power - 1) * se_mean if mean > 0 else 0.0
    return value, se


@dataclass
class CauchyStudy:
    """Distances between solutions for consecutive truncation levels."""

    n_values: tuple
    p: float
    s_distances: list
    m_distances: list
    s_stderr: list
    m_stderr: list
    solutions: list = field(default_factory=list, repr=False)

    def distance(self, a, b):
        """``(S^p, M^p)`` distance between the solutions at positions ``a`` and ``b``."""
        sa, sb = self.solutions[a], self.solutions[b]
        return (_sp_distance(sa.Y, sb.Y, self.p)[0],
                _mp_distance(sa.Z, sb.Z, sa.grid.dt, self.p)[0])

    def nonincreasing(self, k_sigma=3.0, which="s"):
        d = self.s_distances if which == "s" else self.m_distances
        se = self.s_stderr if which == "s" else self.m_stderr
        return all(d[j + 1] <= d[j] + k_sigma * math.hypot(se[j], se[j + 1])
                   for j in range(len(d) - 1))

    def rows(self):
        return [{"n": self.n_values[j], "n_next": self.n_values[j + 1],
                 "s_distance": self.s_distances[j], "s_stderr": self.s_stderr[j],
                 "m_distance": self.m_distances[j], "m_stderr": self.m_stderr[j]}
                for j in range(len(self.s_distances))]


def _solve_tagged(gen, grid, bundle, config, tag):
    try:
        return solve_bdsde(gen, grid, bundle, config)
    except BDSDEError as exc:
        exc.args = (f"{tag}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def cauchy_study_step2(gen, grid, bundle, n_values, p, config=None):
    """Solve the truncated problems ``build_step2_data(gen, n)`` on shared paths."""
    n_values = tuple(float(n) for n in n_values)
    if len(n_values) < 2 or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ConfigurationError("n_values must be strictly increasing with at least 2 entries")
    if not 1.0 < p < 2.0:
        raise PreconditionError(f"the Step-2 study is set up for p in (1, 2), got {p}")
    config = config or SolverConfig()
    sols = [_solve_tagged(build_step2_data(gen, n), grid, bundle, config, f"n={n:g}")
            for n in n_values]
    s_d, s_se, m_d, m_se = [], [], [], []
    for a, b in zip(sols, sols[1:]):
        v, e = _sp_distance(a.Y, b.Y, p)
        s_d.append(v)
        s_se.append(e)
        v, e = _mp_distance(a.Z, b.Z, grid.dt, p)
        m_d.append(v)
        m_se.append(e)
    return CauchyStudy(n_values, float(p), s_d, m_d, s_se, m_se, sols)


def terminal_truncation_gaps(gen, bundle, n_values, p):
    """``E|q_{n'}(xi) - q_n(xi)|^p`` for consecutive levels, from the terminal variable alone."""
    out = []
    for a, b in zip(n_values, n_values[1:]):
        xa = build_step2_data(gen, a).eval_xi(bundle.W)
        xb = build_step2_data(gen, b).eval_xi(bundle.W)
        out.append(float(np.mean(np.linalg.norm(xb - xa, axis=-1) ** p)))
    return out


# ------------------------------------------------------------ Step 1 probe

@dataclass
class Step1Report:
    sup_Y_inf: float
    r: float
    r_bound: float
    z_m2: float
    violations: int
    paths_M: int

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {"sup_Y_inf": self.sup_Y_inf, "r": self.r, "r_bound": self.r_bound,
                "z_m2": self.z_m2, "violations": self.violations, "paths_M": self.paths_M,
                "passed": self.passed}


def step1_boundedness_probe(gen, params, grid, bundle, config=None, *, xi_bound, f0_bound,
                            psi_spacing=2.0**-6):
    """Solve with ``build_h_n(gen, params)`` and count paths leaving ``|Y| <= r``.

    ``xi_bound`` and ``f0_bound`` are the caller's certified bounds on ``|xi|``
    and ``|f(t,0,0)|``; ``g(t,0,0)`` must vanish.
    """
    for t in grid.nodes:
        if np.any(gen.g0(t, 1) != 0):
            raise PreconditionError(f"Step-1 probe needs g(t,0,0) = 0, violated at t={t:g}")
    r_bound = step1_radius(gen, xi_bound, f0_bound, grid.horizon_T)
    sol = solve_bdsde(build_h_n(gen, params, psi_spacing), grid, bundle, config)
    absY = np.linalg.norm(sol.Y, axis=-1)
    violations = int(np.count_nonzero(np.max(absY, axis=1) > params.r))
    z_m2 = float(math.sqrt(np.mean(np.sum(sol.Z**2, axis=(1, 2, 3)) * grid.dt)))
    return Step1Report(float(absY.max()), float(params.r), r_bound, z_m2, violations,
                       bundle.paths_M)


# --------------------------------------------------------- uniqueness probe

_FREE_FIELDS = {"scheme", "regression_seed", "picard_init"}


@dataclass
class UniquenessReport:
    y0_a: np.ndarray
    y0_b: np.ndarray
    y0_gap: float
    stderr: float
    bias_bound: float
    k_sigma: float = 3.0

    @property
    def tolerance(self):
        return self.k_sigma * self.stderr + self.bias_bound

    @property
    def passed(self):
        return self.y0_gap <= self.tolerance

    def to_dict(self):
        return {"y0_a": np.asarray(self.y0_a).tolist(), "y0_b": np.asarray(self.y0_b).tolist(),
                "y0_gap": self.y0_gap, "stderr": self.stderr, "bias_bound": self.bias_bound,
                "tolerance": self.tolerance, "passed": self.passed}


def uniqueness_probe(gen, grid, bundle, config_a, config_b, fine_bundle=None, k_sigma=3.0):
    """Compare ``Y_0`` from two runs that differ only in scheme, seed or Picard start.

    With ``fine_bundle`` (same seed, twice as many steps, coupled increments)
    each run is repeated on the finer grid and ``2 |Y_0(N) - Y_0(2N)|`` per
    run bounds its time-discretisation bias.
    """
    diff = {k for k in config_a.__dict__ if config_a.__dict__[k] != config_b.__dict__[k]}
    if diff - _FREE_FIELDS:
        raise ConfigurationError(
            f"configs may differ only in {sorted(_FREE_FIELDS)}, also differ in {sorted(diff - _FREE_FIELDS)}")
    sol_a = solve_bdsde(gen, grid, bundle, config_a)
    sol_b = sol_a if not diff else solve_bdsde(gen, grid, bundle, config_b)
    y0_a, y0_b = sol_a.y0, sol_b.y0
    gap = float(np.max(np.abs(y0_a - y0_b)))
    se_a = np.asarray(sol_a.y0_stderr if sol_a.y0_stderr is not None else 0.0)
    se_b = np.asarray(sol_b.y0_stderr if sol_b.y0_stderr is not None else 0.0)
    stderr = float(np.max(np.sqrt(se_a**2 + se_b**2))) if diff else 0.0
    bias = 0.0
    if fine_bundle is not None and diff:
        if fine_bundle.grid.steps_N != 2 * grid.steps_N:
            raise ConfigurationError("fine_bundle must have twice as many steps")
        for cfg, y0 in ((config_a, y0_a), (config_b, y0_b)):
            fine = solve_bdsde(gen, fine_bundle.grid, fine_bundle, cfg).y0
            bias += 2.0 * float(np.max(np.abs(y0 - fine)))
    return UniquenessReport(y0_a, y0_b, gap, stderr, bias, k_sigma)


# -------------------------------------------------------- convergence study

@dataclass
class ConvergenceTable:
    N_values: tuple
    errors: list
    rates: list

    def strictly_decreasing(self):
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def rows(self):
        return [{"N": n, "error": e, "empirical_rate": r}
                for n, e, r in zip(self.N_values, self.errors, self.rates)]


def convergence_study(gen, N_values, config=None, *, paths_M=None, master_seed=0,
                      horizon_T=1.0, threads=None):
    """RMS error against the registered closed form over a coupled ``N`` ladder.

    All bundles are drawn at the finest level and summed down, so every grid
    sees the same Brownian paths. The RMS runs over frozen ``B`` paths, ``W``
    paths and time nodes; ``empirical_rate[j] = log2(error[j] / error[j+1])``.
    """
    if gen.closed_form is None:
        raise ConfigurationError(f"no closed form registered for {gen.name}")
    config = config or SolverConfig()
    N_values = tuple(int(n) for n in N_values)
    if any(b <= a for a, b in zip(N_values, N_values[1:])):
        raise ConfigurationError("N_values must be strictly increasing")
    paths_M = paths_M or config.paths_M
    finest = N_values[-1]
    errors = []
    for N in N_values:
        grid = make_grid(horizon_T, N)
        bundle = sample_brownian(grid, paths_M, gen.dim_d, gen.dim_l, master_seed,
                                 refine_to=finest, threads=threads)
        sq, count = 0.0, 0
        for b in range(config.b_path_count):
            cfg = SolverConfig(**{**config.__dict__, "frozen_b_index": b, "stderr_batches": 0})
            sol = solve_bdsde(gen, grid, bundle, cfg)
            exact = gen.closed_form(grid, sol.W, sol.B_path)
            sq += float(np.sum((sol.Y - exact) ** 2))
            count += sol.Y.size
        errors.append(math.sqrt(sq / count))
    rates = [math.log2(a / b) if a > 0 and b > 0 else math.nan
             for a, b in zip(errors, errors[1:])] + [None]
    return ConvergenceTable(N_values, errors, rates)
