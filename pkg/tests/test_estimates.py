import math

import numpy as np
import pytest
from scipy import integrate, stats

from bdsde import SolverConfig, TruncationParams, get_problem, make_grid, sample_brownian, solve_bdsde
from bdsde.estimates import (
    RATIO_FLOOR,
    cauchy_study_step2,
    check_lemma31,
    check_lemma32,
    convergence_study,
    gaussian_abs_moment,
    ratio_spread,
    step1_boundedness_probe,
    terminal_truncation_gaps,
    truncated_gaussian_moment,
    uniqueness_probe,
    verify_moment_conditions,
)
from bdsde.exceptions import ConfigurationError, PreconditionError
from bdsde.generators import scale_data

FAST = SolverConfig(stderr_batches=0)


@pytest.fixture(scope="module")
def setup():
    grid = make_grid(1.0, 32)
    return grid, sample_brownian(grid, 4000, master_seed=31)


def test_zero_data(setup):
    grid, b = setup
    gen = get_problem("zero")
    sol = solve_bdsde(gen, grid, b, FAST)
    for rep in (check_lemma31(sol, gen, 1.5), check_lemma32(sol, gen, 1.5)):
        assert rep.lhs == 0.0 and rep.rhs == 0.0 and rep.ratio == 0.0
        assert rep.floor == RATIO_FLOOR
        assert all(v == 0.0 for v in rep.rhs_terms.values())


def test_lemma31_martingale(setup):
    grid, b = setup
    gen = get_problem("constant_g", {"c": 0.0})
    sol = solve_bdsde(gen, grid, b, FAST)
    rep = check_lemma31(sol, gen, 2.0)
    assert abs(rep.lhs - 1.0) < 0.05
    # E sup_{t<=1} W_t^2 >= E W_1^2 = 1
    assert rep.rhs_terms["supY_term"] >= 1.0 - 0.05
    assert rep.ratio <= 1.0
    assert rep.mc_stderr > 0


def test_g_zero_family_mixed_term(setup):
    grid, b = setup
    for name in ("linear_drift", "monotone_cubic", "linear_g"):
        gen = get_problem(name)
        rep = check_lemma32(solve_bdsde(gen, grid, b, FAST), gen, 1.5)
        assert rep.rhs_terms["mixed_g0_term"] == 0.0
        assert rep.rhs_terms["g0_term"] == 0.0


def test_mixed_term_when_g0_nonzero(setup):
    grid, b = setup
    gen = get_problem("constant_g", {"c": 0.5})
    sol = solve_bdsde(gen, grid, b, FAST)
    rep = check_lemma32(sol, gen, 2.0)
    # p = 2: the mixed term is int |g0|^2 = c^2 T on every path
    assert rep.rhs_terms["mixed_g0_term"] == pytest.approx(0.25)
    assert rep.rhs_terms["g0_term"] == pytest.approx(0.25)


def test_terms_nonnegative_ratio_finite(setup):
    grid, b = setup
    for name in ("linear_drift", "linear_g", "constant_g", "monotone_cubic"):
        gen = get_problem(name)
        sol = solve_bdsde(gen, grid, b, FAST)
        for rep in (check_lemma31(sol, gen, 1.5), check_lemma32(sol, gen, 1.5)):
            assert math.isfinite(rep.ratio) and rep.lhs >= 0
            assert all(v >= 0 for v in rep.rhs_terms.values())
            d = rep.to_dict()
            assert d["rhs"] == pytest.approx(sum(d["rhs_terms"].values()))


def test_scaling_invariance(setup):
    grid, b = setup
    gen = get_problem("linear_g")
    base = solve_bdsde(gen, grid, b, FAST)
    scaled_gen = scale_data(gen, 3.0)
    scaled = solve_bdsde(scaled_gen, grid, b, FAST)
    for check in (check_lemma31, check_lemma32):
        r0, r1 = check(base, gen, 1.5), check(scaled, scaled_gen, 1.5)
        assert abs(r0.ratio - r1.ratio) <= 3 * math.hypot(r0.mc_stderr, r1.mc_stderr)
        assert r1.lhs == pytest.approx(3.0**1.5 * r0.lhs, rel=1e-9)


def test_ratio_stable_over_N():
    gen = get_problem("linear_drift")
    reps = []
    for N in (32, 64, 128):
        grid = make_grid(1.0, N)
        b = sample_brownian(grid, 10_000, master_seed=5, refine_to=128)
        reps.append(check_lemma32(solve_bdsde(gen, grid, b, FAST), gen, 1.5))
    assert ratio_spread(reps) < 1.3


def test_ratio_spread_conventions():
    class R:
        def __init__(self, ratio):
            self.ratio = ratio
    assert ratio_spread([R(0.0), R(0.0)]) == 1.0
    assert ratio_spread([R(0.0), R(1.0)]) == math.inf
    assert ratio_spread([R(1.0), R(2.0)]) == 2.0


def test_mismatched_ensemble(setup):
    grid, b = setup
    sol = solve_bdsde(get_problem("zero"), grid, b, FAST)
    from bdsde import GeneratorSpec
    gen2 = GeneratorSpec(2, 1, 1, f=None, g=None, xi=None)
    with pytest.raises(ConfigurationError):
        check_lemma31(sol, gen2, 2.0)


# ------------------------------------------------------------ moment oracle

def test_gaussian_moments():
    assert gaussian_abs_moment(2.0) == pytest.approx(1.0)
    assert gaussian_abs_moment(4.0, 2.0) == pytest.approx(3.0 * 4.0)
    expected = 2 ** (-0.45) * math.gamma(0.05) / math.sqrt(math.pi)
    assert gaussian_abs_moment(-0.9) == pytest.approx(expected, rel=1e-12)
    assert gaussian_abs_moment(-1.0) == math.inf
    # independent quadrature of the density from scipy.stats
    direct, _ = integrate.quad(lambda x: x**0.5 * 2 * stats.norm.pdf(x), 0, math.inf)
    assert truncated_gaussian_moment(0.5) == pytest.approx(direct, rel=1e-8)


def test_moment_conditions():
    chk = verify_moment_conditions(0.6, 1.5)
    assert chk.p_integrable and not chk.square_integrable
    assert chk.p_moment_closed == pytest.approx(8.041358421965986, rel=1e-10)
    assert np.all(np.diff(chk.second_moment_truncated) > 0)
    light = verify_moment_conditions(0.3, 1.5)
    assert light.p_integrable and light.square_integrable
    heavy = verify_moment_conditions(0.8, 1.5)
    assert not heavy.p_integrable


# ------------------------------------------------------------- Cauchy study

def test_cauchy_bounded_is_exact(setup):
    grid, b = setup
    gen = get_problem("monotone_cubic")  # |xi| <= 1
    study = cauchy_study_step2(gen, grid, b, [2, 4, 8], 1.5, FAST)
    assert study.s_distances == [0.0, 0.0] and study.m_distances == [0.0, 0.0]


def test_cauchy_triangle_and_rows(setup):
    grid, b = setup
    gen = get_problem("heavy_tail_xi")
    study = cauchy_study_step2(gen, grid, b, [2, 4, 8], 1.5, FAST)
    d02 = study.distance(0, 2)
    assert d02[0] <= study.s_distances[0] + study.s_distances[1] + 1e-12
    assert d02[1] <= study.m_distances[0] + study.m_distances[1] + 1e-12
    assert [r["n"] for r in study.rows()] == [2.0, 4.0]
    assert all(d >= 0 for d in study.s_distances + study.m_distances)


def test_cauchy_preconditions(setup):
    grid, b = setup
    gen = get_problem("heavy_tail_xi")
    with pytest.raises(PreconditionError):
        cauchy_study_step2(gen, grid, b, [2, 4], 2.0, FAST)
    with pytest.raises(ConfigurationError):
        cauchy_study_step2(gen, grid, b, [4, 2], 1.5, FAST)


def test_terminal_gaps_shrink(setup):
    _, b = setup
    gaps = terminal_truncation_gaps(get_problem("heavy_tail_xi"), b, [2, 4, 8, 16], 1.5)
    assert gaps[0] > gaps[1] > gaps[2] > 0


# -------------------------------------------------------------- Step 1 probe

def test_step1_zero_data(setup):
    grid, b = setup
    gen = get_problem("zero")
    rep = step1_boundedness_probe(gen, TruncationParams(1e-6, 4.0), grid, b, FAST,
                                  xi_bound=0.0, f0_bound=0.0)
    assert rep.sup_Y_inf == 0.0 and rep.passed


def test_step1_bound_n_independent(setup):
    grid, b = setup
    gen = get_problem("monotone_cubic", {"xi_amp": 0.0})
    from bdsde import step1_radius
    r = step1_radius(gen, 0.5, 0.0)
    for n in (2.0, 16.0):
        rep = step1_boundedness_probe(gen, TruncationParams(r, n), grid, b, FAST,
                                      xi_bound=0.5, f0_bound=0.0)
        assert rep.violations == 0 and rep.sup_Y_inf <= r


def test_step1_requires_g0_zero(setup):
    grid, b = setup
    with pytest.raises(PreconditionError):
        step1_boundedness_probe(get_problem("constant_g"), TruncationParams(1.0, 1.0), grid, b,
                                FAST, xi_bound=1.0, f0_bound=0.0)


# --------------------------------------------------------- uniqueness probe

def test_uniqueness_identical(setup):
    grid, b = setup
    rep = uniqueness_probe(get_problem("monotone_cubic"), grid, b, FAST, FAST)
    assert rep.y0_gap == 0.0 and rep.passed


def test_uniqueness_rejects_other_fields(setup):
    grid, b = setup
    with pytest.raises(ConfigurationError):
        uniqueness_probe(get_problem("zero"), grid, b, FAST,
                         SolverConfig(basis_degree=2, stderr_batches=0))


def test_uniqueness_schemes(setup):
    grid, b = setup
    fine = sample_brownian(make_grid(1.0, 64), 4000, master_seed=31, refine_to=64)
    coarse = sample_brownian(grid, 4000, master_seed=31, refine_to=64)
    rep = uniqueness_probe(get_problem("linear_drift"), grid, coarse, SolverConfig(),
                           SolverConfig(scheme="implicit_picard"), fine_bundle=fine)
    assert rep.stderr > 0 and rep.bias_bound > 0
    assert rep.passed
    assert set(rep.to_dict()) >= {"y0_gap", "stderr", "tolerance", "passed"}


# ------------------------------------------------------- convergence study

def test_convergence_martingale_rates_defined():
    tab = convergence_study(get_problem("zero"), [4, 8, 16], FAST, paths_M=500)
    assert tab.errors == [0.0, 0.0, 0.0]
    tab = convergence_study(get_problem("constant_g", {"c": 0.0}), [4, 8, 16], FAST,
                            paths_M=2000)
    assert all(e < 0.05 for e in tab.errors)
    assert all(math.isfinite(r) for r in tab.rates[:-1]) and tab.rates[-1] is None
    assert [row["N"] for row in tab.rows()] == [4, 8, 16]


def test_convergence_needs_closed_form():
    with pytest.raises(ConfigurationError):
        convergence_study(get_problem("heavy_tail_xi"), [4, 8], FAST, paths_M=10)
    with pytest.raises(ConfigurationError):
        convergence_study(get_problem("zero"), [8, 4], FAST, paths_M=10)


def test_convergence_constant_g_noise_level():
    # Y^c - Y^0 is exact in the scheme, so the error is the martingale's regression
    # noise: equal to the c = 0 error and flat in N (its sign of change is seed-dependent)
    ladder = [16, 32, 64, 128]
    tab = convergence_study(get_problem("constant_g"), ladder, FAST, paths_M=10_000,
                            master_seed=2)
    ref = convergence_study(get_problem("constant_g", {"c": 0.0}), ladder, FAST,
                            paths_M=10_000, master_seed=2)
    np.testing.assert_allclose(tab.errors, ref.errors, rtol=1e-6)
    assert max(tab.errors) < 0.03
    assert max(tab.errors) / min(tab.errors) < 1.25
