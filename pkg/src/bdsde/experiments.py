"""Command implementations behind ``bdsde run``.

Each runner takes a validated ``ExperimentConfig`` and returns a JSON-ready
report plus CSV tables ``{name: (columns, rows)}``.
"""

import numpy as np

from .calculus import SemimartingaleSpec, TanakaReport, evaluate_tanaka_identity
from .catalog import get_problem
from .estimates import (
    cauchy_study_step2,
    check_lemma31,
    check_lemma32,
    convergence_study,
    uniqueness_probe,
)
from .generators import SamplingCloud, scale_data, validate_assumptions
from .paths import make_grid, sample_brownian
from .solver import lp_norms, solve_over_b_paths


def classical_case():
    """``X = W`` (k = d = l = 1): the Itô formula for ``|x|^2``."""
    return SemimartingaleSpec(
        dim_k=1, X0=np.zeros(1),
        K=lambda t, W, B: np.zeros((W.shape[0], 1)),
        G=lambda t, W, B: np.zeros((W.shape[0], 1, 1)),
        H=lambda t, W, B: np.ones((W.shape[0], 1, 1)),
    )


def generic_case():
    """Bounded smooth integrands with k = 2, d = 2, l = 1."""

    def K(t, W, B):
        return np.stack([np.sin(W[:, 0]) + 0.2 * t, np.cos(W[:, 1] + B[:, 0])], axis=-1)

    def G(t, W, B):
        col = np.stack([np.cos(W[:, 1] + t), np.sin(B[:, 0]) * np.tanh(W[:, 0])], axis=-1)
        return 0.5 * col[:, :, None]

    def H(t, W, B):
        out = np.empty((W.shape[0], 2, 2))
        out[:, 0, 0] = 1.0 + 0.3 * np.sin(W[:, 0])
        out[:, 0, 1] = 0.2 * np.cos(B[:, 0])
        out[:, 1, 0] = 0.3 * np.tanh(W[:, 1])
        out[:, 1, 1] = 0.8 + 0.1 * np.cos(t)
        return out

    return SemimartingaleSpec(dim_k=2, X0=np.array([0.5, -0.3]), K=K, G=G, H=H)


SEMIMARTINGALES = {"classical": (classical_case, 1, 1), "generic": (generic_case, 2, 1)}


def _problem(cfg):
    return get_problem(cfg.problem.name, dict(cfg.problem.params))


def _coupled(cfg, N, finest, gen, threads):
    grid = make_grid(cfg.grid.T, N)
    bundle = sample_brownian(grid, cfg.monte_carlo.M, gen.dim_d, gen.dim_l,
                             cfg.monte_carlo.master_seed, refine_to=finest, threads=threads)
    return grid, bundle


def run_verify_tanaka(cfg, threads=None):
    build, d, l = SEMIMARTINGALES[cfg.tanaka.case]
    spec = build()
    N_list = cfg.tanaka.N_list
    finest = max(N_list)
    summaries, rows = [], []
    for N in N_list:
        grid = make_grid(cfg.grid.T, N)
        bundle = sample_brownian(grid, cfg.monte_carlo.M, d, l, cfg.monte_carlo.master_seed,
                                 refine_to=finest, threads=threads)
        rep = evaluate_tanaka_identity(spec, bundle, p=cfg.p, epsilon=cfg.tanaka.epsilon)
        summaries.append(rep.summary())
        for m in range(bundle.paths_M):
            rows.append([N, m, rep.lhs[m], *(rep.rhs_terms[t][m] for t in rep.TERMS),
                         rep.residual[m]])
    rms = [s["residual_rms"] for s in summaries]
    report = {"case": cfg.tanaka.case, "reports": summaries, "residual_rms": rms,
              "monotone_decrease": all(b < a for a, b in zip(rms, rms[1:]))}
    columns = ["N", "path", "lhs", *TanakaReport.TERMS, "residual"]
    return "tanaka_report", report, {"tanaka_residuals": (columns, rows)}


def run_check_assumptions(cfg, threads=None):
    gen = _problem(cfg)
    a = cfg.assumptions
    cloud = SamplingCloud(count=a.count, seed=a.seed, y_range=tuple(a.y_range),
                          z_range=tuple(a.z_range), tol=a.tol)
    reports = validate_assumptions(gen, cloud)
    columns = ["condition", "samples_tested", "worst_ratio", "threshold", "violation_count",
               "passed"]
    rows = [[r.checked_condition, r.samples_tested, r.worst_ratio, r.threshold,
             r.violation_count, r.passed] for r in reports]
    report = {"problem": gen.name, "lambda": gen.lam, "mu": gen.mu, "alpha": gen.alpha,
              "reports": [r.to_dict() for r in reports]}
    return "assumptions", report, {"assumptions": (columns, rows)}


def run_solve(cfg, threads=None):
    gen = _problem(cfg)
    grid = make_grid(cfg.grid.T, cfg.grid.N)
    bundle = sample_brownian(grid, cfg.monte_carlo.M, gen.dim_d, gen.dim_l,
                             cfg.monte_carlo.master_seed, threads=threads)
    sols = solve_over_b_paths(gen, grid, bundle, cfg.solver_config())
    k, d = gen.dim_k, gen.dim_d
    columns = ["b_index", "path", "step", "t"] + [f"Y{j}" for j in range(k)] + \
        [f"Z{j}_{c}" for j in range(k) for c in range(d)]
    rows, summaries = [], []
    n_export = min(cfg.solve.export_paths, bundle.paths_M)
    for sol in sols:
        norms = lp_norms(sol, cfg.p)
        summaries.append({**sol.summary(), "s_p": norms.s_p, "m_p": norms.m_p, "p": cfg.p})
        for m in range(n_export):
            for i in range(grid.steps_N + 1):
                z = sol.Z[m, i].ravel() if i < grid.steps_N else np.full(k * d, np.nan)
                rows.append([sol.frozen_B_index, m, i, grid.nodes[i], *sol.Y[m, i], *z])
    report = {"problem": gen.name, "solutions": summaries}
    return "solution_summary", report, {"solution": (columns, rows)}


def run_estimates(cfg, threads=None):
    base = _problem(cfg)
    gen = base if cfg.estimates.kappa == 1.0 else scale_data(base, cfg.estimates.kappa)
    N_list = cfg.estimates.N_list
    columns = ["problem", "N", "n", "lemma", "b_index", "p", "lhs", "rhs", "ratio", "mc_stderr",
               "xi_term", "f0_term", "g0_term", "supY_term", "mixed_g0_term"]
    rows, reports = [], []
    for N in N_list:
        grid, bundle = _coupled(cfg, N, max(N_list), gen, threads)
        for sol in solve_over_b_paths(gen, grid, bundle, cfg.solver_config()):
            for rep in (check_lemma31(sol, gen, cfg.p), check_lemma32(sol, gen, cfg.p)):
                t = rep.rhs_terms
                rows.append([gen.name, N, "", rep.lemma_id, sol.frozen_B_index, rep.p, rep.lhs,
                             rep.rhs, rep.ratio, rep.mc_stderr,
                             *(t.get(name, "") for name in
                               ("xi_term", "f0_term", "g0_term", "supY_term", "mixed_g0_term"))])
                reports.append({**rep.to_dict(), "b_index": sol.frozen_B_index})
    return "estimates", {"problem": gen.name, "reports": reports}, {"estimates": (columns, rows)}


def run_cauchy(cfg, threads=None):
    gen = _problem(cfg)
    grid = make_grid(cfg.grid.T, cfg.grid.N)
    bundle = sample_brownian(grid, cfg.monte_carlo.M, gen.dim_d, gen.dim_l,
                             cfg.monte_carlo.master_seed, threads=threads)
    study = cauchy_study_step2(gen, grid, bundle, cfg.cauchy.n_values, cfg.p,
                               cfg.solver_config(stderr_batches=0))
    rows = [[r["n"], r["n_next"], r["s_distance"], r["s_stderr"], r["m_distance"], r["m_stderr"]]
            for r in study.rows()]
    columns = ["n", "n_next", "s_distance", "s_stderr", "m_distance", "m_stderr"]
    report = {"problem": gen.name, "p": cfg.p, "rows": study.rows(),
              "nonincreasing": study.nonincreasing(cfg.cauchy.k_sigma)}
    return "cauchy", report, {"cauchy": (columns, rows)}


def run_convergence(cfg, threads=None):
    gen = _problem(cfg)
    table = convergence_study(gen, cfg.convergence.N_list, cfg.solver_config(),
                              paths_M=cfg.monte_carlo.M, master_seed=cfg.monte_carlo.master_seed,
                              horizon_T=cfg.grid.T, threads=threads)
    rows = [[r["N"], r["error"], "" if r["empirical_rate"] is None else r["empirical_rate"]]
            for r in table.rows()]
    report = {"problem": gen.name, "rows": table.rows(),
              "strictly_decreasing": table.strictly_decreasing()}
    return "convergence", report, {"convergence": (["N", "error", "empirical_rate"], rows)}


def run_uniqueness(cfg, threads=None):
    gen = _problem(cfg)
    u = cfg.uniqueness
    N = cfg.grid.N
    finest = 2 * N if u.refine_bias else N
    grid, bundle = _coupled(cfg, N, finest, gen, threads)
    fine = None
    if u.refine_bias:
        _, fine = _coupled(cfg, 2 * N, finest, gen, threads)
    config_a = cfg.solver_config()
    variant = {key: getattr(u, key) for key in ("scheme", "regression_seed", "picard_init")
               if getattr(u, key) is not None}
    config_b = cfg.solver_config(**variant)
    rep = uniqueness_probe(gen, grid, bundle, config_a, config_b, fine_bundle=fine,
                           k_sigma=u.k_sigma)
    columns = ["problem", "N", "y0_a", "y0_b", "y0_gap", "stderr", "bias_bound", "tolerance",
               "passed"]
    rows = [[gen.name, N, float(rep.y0_a[0]), float(rep.y0_b[0]), rep.y0_gap, rep.stderr,
             rep.bias_bound, rep.tolerance, rep.passed]]
    report = {"problem": gen.name, "variant": variant, **rep.to_dict()}
    return "uniqueness", report, {"uniqueness": (columns, rows)}


RUNNERS = {
    "verify-tanaka": run_verify_tanaka,
    "check-assumptions": run_check_assumptions,
    "solve": run_solve,
    "estimates": run_estimates,
    "cauchy": run_cauchy,
    "convergence": run_convergence,
    "uniqueness": run_uniqueness,
}
