"""Acceptance criteria 1-10. Each test prints one ``criterion n: PASS|FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also collected in the ``acceptance criteria`` terminal section.
"""

import json
import math
import time

import numpy as np
import pytest

from bdsde import (
    GeneratorSpec,
    SamplingCloud,
    SolverConfig,
    TruncationParams,
    build_h_n,
    evaluate_tanaka_identity,
    get_problem,
    make_grid,
    nested_mc_oracle,
    q_n,
    sample_brownian,
    solve_bdsde,
    step1_radius,
    theta_r,
    u_eps,
    u_eps_gradient,
    u_eps_hessian,
    validate_assumptions,
)
from bdsde.catalog import CATALOG, assumption_profile
from bdsde.cli import main
from bdsde.estimates import (
    cauchy_study_step2,
    check_lemma31,
    check_lemma32,
    convergence_study,
    ratio_spread,
    step1_boundedness_probe,
    uniqueness_probe,
    verify_moment_conditions,
)
from bdsde.experiments import classical_case, generic_case
from bdsde.generators import build_step2_data, scale_data

pytestmark = pytest.mark.slow


def _by_name(reports):
    return {r.checked_condition: r for r in reports}


# ---------------------------------------------------------------- 1. Tanaka

@pytest.mark.criterion(1)
def test_tanaka_identity(record_criterion):
    start = time.perf_counter()
    generic = []
    for N in (64, 128, 256):
        b = sample_brownian(make_grid(1.0, N), 10_000, 2, 1, master_seed=1, refine_to=256)
        generic.append(evaluate_tanaka_identity(generic_case(), b, p=1.5, epsilon=0.1)
                       .residual_rms)
    classical = []
    for N in (64, 128, 256, 512):
        b = sample_brownian(make_grid(1.0, N), 10_000, master_seed=1, refine_to=512)
        classical.append(evaluate_tanaka_identity(classical_case(), b, p=2.0).residual_rms)
    factors = [a / b for a, b in zip(classical, classical[1:])]
    elapsed = time.perf_counter() - start
    ok = (all(b < a for a, b in zip(generic, generic[1:]))
          and all(1.2 <= f <= 2.0 for f in factors) and elapsed <= 120)
    assert record_criterion(
        ok, f"generic rms {np.round(generic, 5).tolist()}, classical factors "
            f"{np.round(factors, 3).tolist()}, {elapsed:.1f}s")


# ------------------------------------------------------ 2. u_eps derivatives

@pytest.mark.criterion(2)
def test_u_eps_derivatives(record_criterion):
    rng = np.random.default_rng(2)
    h = 1e-5
    worst_g = worst_h = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 4))
        x = rng.uniform(-1, 1, size=k)
        eps = float(rng.uniform(0.5, 1.5))
        E = np.eye(k)
        fd_g = np.array([(u_eps(x + h * e, eps) - u_eps(x - h * e, eps)) / (2 * h) for e in E])
        fd_h = np.array([(u_eps_gradient(x + h * e, eps) - u_eps_gradient(x - h * e, eps))
                         / (2 * h) for e in E])
        g, H = u_eps_gradient(x, eps), u_eps_hessian(x, eps)
        worst_g = max(worst_g, np.linalg.norm(fd_g - g) / np.linalg.norm(g))
        worst_h = max(worst_h, np.linalg.norm(fd_h - H) / np.linalg.norm(H))
    ok = worst_g <= 1e-6 and worst_h <= 1e-6
    assert record_criterion(ok, f"max rel error gradient {worst_g:.2e}, Hessian {worst_h:.2e}")


# ------------------------------------------------------ 3. closed-form oracles

def _oracle_confirms(gen, exact_y0, w0, dB_of, outer=16):
    """Nested oracle at N = 8 and 4 against the closed form at W_0 = w0.

    Tolerance: 3 standard errors plus twice the N = 4 -> 8 change (time bias).
    """
    res = {}
    for N in (4, 8):
        grid = make_grid(1.0, N)
        res[N] = nested_mc_oracle(gen, grid, dB_of(N), SolverConfig(nested_inner=4),
                                  outer=outer, w0=w0, seed=N)
    gap = abs(res[8].y0[0] - exact_y0(res))
    tol = 3 * res[8].y0_stderr[0] + 2 * abs(res[8].y0[0] - res[4].y0[0]) + 1e-12
    return gap <= tol, gap, tol


def _coupled_dB(N, fine=8, seed=17):
    z = np.random.default_rng(seed).standard_normal((fine, 1)) * math.sqrt(1.0 / fine)
    return z.reshape(N, fine // N, 1).sum(axis=1)


def _rms_per_step(a, b):
    axes = tuple(i for i in range(a.ndim) if i != 1)
    return np.sqrt(np.mean((a - b) ** 2, axis=axes))


@pytest.mark.criterion(3)
def test_closed_form_oracles(record_criterion):
    w0 = 0.7
    # confirm each closed form with the nested oracle first
    conf_a = _oracle_confirms(get_problem("constant_g", {"c": 0.0}), lambda r: w0, w0,
                              lambda N: np.zeros((N, 1)))
    conf_b = _oracle_confirms(get_problem("linear_drift", {"a": 2.0}),
                              lambda r: math.exp(2.0) * w0, w0, lambda N: np.zeros((N, 1)))
    conf_c = _oracle_confirms(get_problem("constant_g", {"c": 0.5}),
                              lambda r: w0 + 0.5 * _coupled_dB(8).sum(), w0, _coupled_dB)
    # the tree is exact for linear data, so the two schemes must bracket e^{aT} w0
    drift = get_problem("linear_drift", {"a": 2.0})
    bracket = [nested_mc_oracle(drift, make_grid(1.0, 8), np.zeros((8, 1)),
                                SolverConfig(scheme=s, nested_inner=4), outer=4, w0=w0).y0[0]
               for s in ("explicit", "implicit_picard")]
    in_bracket = bracket[0] < math.exp(2.0) * w0 < bracket[1]
    confirmed = in_bracket and all(c[0] for c in (conf_a, conf_b, conf_c))

    # (a) martingale, N = 50, M = 1e4
    grid = make_grid(1.0, 50)
    b = sample_brownian(grid, 10_000, master_seed=3)
    fast = SolverConfig(stderr_batches=0)
    sol = solve_bdsde(get_problem("constant_g", {"c": 0.0}), grid, b, fast)
    err_y = float(_rms_per_step(sol.Y, b.W).max())
    err_z = float(_rms_per_step(sol.Z, np.ones_like(sol.Z)).max())
    ok_a = err_y <= 0.05 and err_z <= 0.05

    # (b) linear drift a = 2, strictly decreasing errors over the N ladder
    tab = convergence_study(get_problem("linear_drift", {"a": 2.0}), [16, 32, 64, 128], fast,
                            paths_M=50_000, master_seed=3)
    ok_b = tab.strictly_decreasing()

    # (c) g = c: the difference to the martingale solution is exactly c (B_T - B_t)
    gc = get_problem("constant_g", {"c": 0.5})
    sol_c = solve_bdsde(gc, grid, b, fast)
    exact_c = gc.closed_form(grid, b.W, sol_c.B_path)
    err_c = float(np.sqrt(np.mean((sol_c.Y - exact_c) ** 2)))
    err_0 = float(np.sqrt(np.mean((sol.Y - b.W) ** 2)))
    ok_c = math.isclose(err_c, err_0, rel_tol=1e-6) and err_0 <= 0.05

    ok = confirmed and ok_a and ok_b and ok_c
    assert record_criterion(
        ok, f"oracle bracket {bracket[0]:.3f} < {math.exp(2.0) * w0:.3f} < {bracket[1]:.3f}, "
            f"gaps/tols a {conf_a[1]:.1e}/{conf_a[2]:.1e} b {conf_b[1]:.3f}/{conf_b[2]:.3f} "
            f"c {conf_c[1]:.1e}/{conf_c[2]:.1e}; (a) Y {err_y:.4f} Z {err_z:.4f}; "
            f"(b) {np.round(tab.errors, 4).tolist()}; (c) {err_c:.4f} vs noise {err_0:.4f}")


# ---------------------------------------------------- 4. assumption validators

@pytest.mark.criterion(4)
def test_assumption_validators(record_criterion):
    cloud = SamplingCloud(count=100_000, seed=4)
    cubic = _by_name(validate_assumptions(get_problem("monotone_cubic"), cloud, ["H2ii"]))["H2ii"]
    bad = _by_name(validate_assumptions(get_problem("quadratic_bad"), cloud, ["H2ii"]))["H2ii"]

    def half_z(alpha):
        gen = GeneratorSpec(1, 1, 1, f=lambda t, y, z: np.zeros_like(y),
                            g=lambda t, y, z: 0.5 * z, xi=lambda W: W[:, -1, :1],
                            lam=1e-9, alpha=alpha)
        return _by_name(validate_assumptions(gen, cloud, ["H2iii"]))["H2iii"]

    exact, below = half_z(0.25), half_z(0.25 * (1 - 1e-6))
    ok = (cubic.passed and cubic.threshold == 0.0 and cubic.samples_tested == 100_000
          and bad.violation_count >= 1 and exact.passed and not below.passed)
    assert record_criterion(
        ok, f"cubic H2ii worst {cubic.worst_ratio:.3g} <= 0; quadratic violations "
            f"{bad.violation_count}; g=0.5z alpha=0.25 passes, alpha below fails: {not below.passed}")


# ----------------------------------------------------- 5. truncation algebra

@pytest.mark.criterion(5)
def test_truncation_algebra(record_criterion):
    rng = np.random.default_rng(5)
    failures = []
    for _ in range(2000):
        k = int(rng.integers(1, 5))
        z = rng.normal(size=k) * rng.uniform(0.01, 30)
        n, m = rng.uniform(0.1, 20, size=2)
        if np.linalg.norm(q_n(z, n)) > n * (1 + 1e-15):
            failures.append("range")
        if np.linalg.norm(z) <= n and not np.array_equal(q_n(z, n), z):
            failures.append("identity")
        if not np.allclose(q_n(q_n(z, n), m), q_n(z, min(n, m)), rtol=1e-13, atol=0):
            failures.append("composition")
        r = float(rng.uniform(0.1, 10))
        u = rng.normal(size=k)
        u /= np.linalg.norm(u)
        # r * u has norm r only up to one ulp, hence the rounding allowance at the boundary
        if abs(theta_r(r * u, r) - 1.0) > 1e-12 or abs(theta_r((r + 1) * u, r)) > 1e-12:
            failures.append("theta boundary")
        if theta_r(0.999 * r * u, r) != 1.0 or theta_r((r + 1.001) * u, r) != 0.0:
            failures.append("theta plateau")
    gen = get_problem("monotone_cubic")
    h = build_h_n(gen, TruncationParams(r=1.0, n=10.0))
    y = rng.uniform(-1, 1, size=(5000, 1))
    z = rng.uniform(-10, 10, size=(5000, 1, 1)) / np.sqrt(1.0 + 1e-12)
    for t in np.linspace(0, 1, 5):
        if not np.array_equal(h.eval_f(t, y, z), gen.eval_f(t, y, z)):
            failures.append("h_n")
    ok = not failures
    assert record_criterion(ok, "2000 random q_n/theta_r cases, 25000 h_n points"
                            + ("" if ok else f"; failures {sorted(set(failures))}"))


# -------------------------------------------------------- 6. Step-1 bound

@pytest.mark.criterion(6)
def test_step1_boundedness(record_criterion):
    gen = get_problem("monotone_cubic", {"xi0": 0.5, "xi_amp": 0.0})
    grid = make_grid(1.0, 64)
    b = sample_brownian(grid, 10_000, master_seed=6)
    r = step1_radius(gen, xi_bound=0.5, f0_bound=0.0)
    reports = [step1_boundedness_probe(gen, TruncationParams(r, n), grid, b,
                                       SolverConfig(stderr_batches=0), xi_bound=0.5, f0_bound=0.0)
               for n in (1.0, 8.0, 128.0)]
    ok = all(rep.violations == 0 and rep.sup_Y_inf <= r for rep in reports)
    assert record_criterion(
        ok, f"r = {r:.4f}, sup|Y| {[round(rep.sup_Y_inf, 4) for rep in reports]}, "
            f"violations {[rep.violations for rep in reports]}")


# ------------------------------------------------------- 7. Step-2 Cauchy

@pytest.mark.criterion(7)
def test_step2_cauchy(record_criterion):
    moments = verify_moment_conditions(0.6, 1.5)
    gen = get_problem("heavy_tail_xi", {"beta_tail": 0.6, "p": 1.5})
    grid = make_grid(1.0, 64)
    b = sample_brownian(grid, 10_000, master_seed=7)
    study = cauchy_study_step2(gen, grid, b, [2, 4, 8, 16], 1.5, SolverConfig(stderr_batches=0))
    ok = moments.p_integrable and not moments.square_integrable and study.nonincreasing(3.0)
    assert record_criterion(
        ok, f"E|xi|^1.5 = {moments.p_moment_closed:.4f} (quad {moments.p_moment_quad:.4f}), "
            f"truncated E|xi|^2 {np.round(moments.second_moment_truncated, 1).tolist()}; "
            f"S^p distances {np.round(study.s_distances, 4).tolist()} "
            f"+- {np.round(study.s_stderr, 4).tolist()}")


# ---------------------------------------------------- 8. estimate ratios

def _in_scope():
    """Catalog problems whose sampled H1-H3 checks pass, with the p values used."""
    out = []
    for name, entry in CATALOG.items():
        gen = entry.builder()
        profile = assumption_profile(gen)
        if all(profile[c] for c in ("H2i", "H2ii", "H2iii", "H3ii", "H3iii")):
            # xi must be p-integrable; the heavy tail is only L^p for p < 1/beta
            ps = (gen.p,) if name == "heavy_tail_xi" else (1.5, 2.0)
            out.append((name, gen, ps))
    return out


@pytest.mark.criterion(8)
def test_estimate_ratios(record_criterion):
    cfg = SolverConfig(basis_degree=2, stderr_batches=0)
    problems = _in_scope()
    notes, ok = [], True
    for name, gen, ps in problems:
        scaled = scale_data(gen, 3.0)
        reports = {}
        for N in (32, 64, 128):
            grid = make_grid(1.0, N)
            b = sample_brownian(grid, 10_000, master_seed=8, refine_to=128)
            sol = solve_bdsde(gen, grid, b, cfg)
            sol_k = solve_bdsde(scaled, grid, b, cfg)
            for p in ps:
                for check in (check_lemma31, check_lemma32):
                    r0, r1 = check(sol, gen, p), check(sol_k, scaled, p)
                    reports.setdefault((check.__name__, p), []).append(r0)
                    finite = math.isfinite(r0.ratio) and math.isfinite(r1.ratio)
                    invariant = abs(r0.ratio - r1.ratio) <= 3 * math.hypot(r0.mc_stderr,
                                                                          r1.mc_stderr)
                    ok &= finite and invariant
        spread = max(ratio_spread(reps) for reps in reports.values())
        ok &= spread <= 2.0
        notes.append(f"{name} {spread:.3f}")
    names = {n for n, _, _ in problems}
    ok &= names == {"zero", "linear_drift", "linear_g", "monotone_cubic", "heavy_tail_xi"}
    assert record_criterion(ok, "finite, kappa=3 invariant; max spread " + ", ".join(notes))


# ----------------------------------------------------------- 9. uniqueness

@pytest.mark.criterion(9)
def test_uniqueness(record_criterion):
    N, M = 64, 10_000
    base = SolverConfig()
    variants = {"implicit": SolverConfig(scheme="implicit_picard"),
                "seed": SolverConfig(regression_seed=99),
                "picard-zero": SolverConfig(scheme="implicit_picard", picard_init="zero")}
    failed, worst = [], 0.0
    for name in CATALOG:
        gen = get_problem(name)
        coarse = sample_brownian(make_grid(1.0, N), M, master_seed=9, refine_to=2 * N)
        fine = sample_brownian(make_grid(1.0, 2 * N), M, master_seed=9, refine_to=2 * N)
        for label, other in variants.items():
            ref = SolverConfig(scheme="implicit_picard") if label == "picard-zero" else base
            rep = uniqueness_probe(gen, coarse.grid, coarse, ref, other, fine_bundle=fine)
            if rep.y0_gap > 0:
                worst = max(worst, rep.y0_gap / rep.tolerance)
            if not rep.passed:
                failed.append(f"{name}/{label}")
    ok = not failed
    assert record_criterion(
        ok, f"{len(CATALOG)} problems x {len(variants)} variants, worst gap/tolerance "
            f"{worst:.2f}" + ("" if ok else f"; failed {failed}"))


# ------------------------------------------------------- 10. reproducibility

@pytest.mark.criterion(10)
def test_reproducibility(record_criterion, tmp_path):
    configs = {
        "solve": {"command": "solve", "problem": "linear_g(beta=0.5)",
                  "grid": {"N": 32}, "monte_carlo": {"M": 4000, "b_path_count": 2,
                                                     "master_seed": 10}},
        "tanaka": {"command": "verify-tanaka", "monte_carlo": {"M": 2000, "master_seed": 10},
                   "tanaka": {"N_list": [16, 32]}},
        "convergence": {"command": "convergence", "problem": "linear_drift",
                        "monte_carlo": {"M": 2000, "master_seed": 10},
                        "convergence": {"N_list": [8, 16, 32]}},
    }
    mismatched, compared = [], 0
    for key, payload in configs.items():
        path = tmp_path / f"{key}.json"
        path.write_text(json.dumps(payload))
        outs = []
        for threads in (1, 8):
            out = tmp_path / f"{key}-t{threads}"
            code = main(["run", "--config", str(path), "--output-dir", str(out),
                         "--threads", str(threads), "--quiet"])
            assert code == 0
            outs.append(out)
        for csv in sorted(outs[0].glob("*.csv")):
            compared += 1
            if csv.read_bytes() != (outs[1] / csv.name).read_bytes():
                mismatched.append(csv.name)
    ok = compared >= 3 and not mismatched
    assert record_criterion(ok, f"{compared} CSV files byte-identical at 1 and 8 threads"
                            + ("" if ok else f"; differ {mismatched}"))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
