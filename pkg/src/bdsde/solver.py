"""Backward regression scheme for BDSDEs, conditionally on a frozen B path.

Given the increments ``dB`` of one backward-driver path, the equation is a
BSDE with random coefficients and is solved by backward induction over the
grid. Conditional expectations given ``W_{t_i}`` are least-squares
projections onto polynomials of the current state.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator
from sklearn.preprocessing import PolynomialFeatures
from sklearn.utils.validation import check_is_fitted

from ._validation import check_finite, check_nonnegative_int, check_positive_int
from .exceptions import (
    BudgetExceededError,
    ConfigurationError,
    ConvergenceError,
    PreconditionError,
    RegressionError,
)
from .paths import BrownianBundle, TimeGrid, sample_brownian

SCHEMES = ("explicit", "implicit_picard")
PICARD_INITS = ("explicit", "zero")


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "explicit"
    picard_max_iters: int = 20
    picard_tol: float = 1e-10
    picard_init: str = "explicit"
    basis_degree: int = 1
    paths_M: int = 10_000
    b_path_count: int = 1
    frozen_b_index: int = 0
    nested_inner: int = 8
    nested_budget: int = 20_000_000
    ridge: float = 1e-10
    max_condition: float = 1e12
    regression_seed: int | None = None
    stderr_batches: int = 10

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.picard_init not in PICARD_INITS:
            raise ConfigurationError(f"picard_init must be one of {PICARD_INITS}")
        check_positive_int(self.picard_max_iters, "picard_max_iters")
        check_nonnegative_int(self.basis_degree, "basis_degree")
        check_positive_int(self.paths_M, "paths_M")
        check_positive_int(self.b_path_count, "b_path_count")
        check_nonnegative_int(self.frozen_b_index, "frozen_b_index")
        check_nonnegative_int(self.stderr_batches, "stderr_batches")
        if self.stderr_batches == 1:
            raise ConfigurationError("stderr_batches must be 0 (off) or >= 2")
        check_positive_int(self.nested_inner, "nested_inner")
        if self.nested_inner % 2:
            raise ConfigurationError("nested_inner must be even (antithetic pairs)")
        if not self.picard_tol > 0:
            raise ConfigurationError("picard_tol must be positive")
        if not self.ridge >= 0:
            raise ConfigurationError("ridge must be >= 0")

    def estimator_params(self):
        return dict(scheme=self.scheme, basis_degree=self.basis_degree,
                    picard_max_iters=self.picard_max_iters, picard_tol=self.picard_tol,
                    picard_init=self.picard_init, ridge=self.ridge,
                    frozen_b_index=self.frozen_b_index, max_condition=self.max_condition)


@dataclass
class SolutionEnsemble:
    """Discrete solution on one frozen ``B`` path.

    ``Y`` is ``(M, N+1, k)``, ``Z`` is ``(M, N, k, d)``; ``dB`` holds the frozen
    backward increments ``(N, l)`` shared by all paths and ``W`` the forward
    paths the solution was evaluated on.
    """

    Y: np.ndarray
    Z: np.ndarray
    frozen_B_index: int
    grid: TimeGrid
    W: np.ndarray = field(repr=False)
    dB: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def B_path(self):
        out = np.zeros((self.dB.shape[0] + 1, self.dB.shape[1]))
        np.cumsum(self.dB, axis=0, out=out[1:])
        return out

    @property
    def y0(self):
        return self.Y[:, 0].mean(axis=0)

    @property
    def y0_stderr(self):
        return self.diagnostics.get("y0_stderr")

    def summary(self):
        diag = self.diagnostics
        return {
            "frozen_B_index": self.frozen_B_index,
            "paths_M": int(self.Y.shape[0]),
            "steps_N": self.grid.steps_N,
            "y0": self.y0.tolist(),
            "y0_stderr": None if self.y0_stderr is None else np.asarray(self.y0_stderr).tolist(),
            "max_condition_number": float(np.max(diag.get("condition_numbers", [np.nan]))),
            "picard_iterations_max": int(max(diag.get("picard_iterations", [0]) or [0])),
        }


def _basis(W_i, t_i, degree):
    """Monomials of total degree <= ``degree`` in ``W_i / sqrt(t_i)``."""
    if degree == 0 or t_i <= 0.0:
        return np.ones((W_i.shape[0], 1)), 0
    x = W_i / np.sqrt(t_i)
    return PolynomialFeatures(degree, include_bias=True).fit_transform(x), degree


class BDSDESolver(BaseEstimator):
    """Regression solver with a fit/predict interface.

    ``fit`` runs the backward induction on a training bundle and stores the
    per-step regression coefficients; ``predict`` replays them on (possibly
    different) forward paths, which is how independent regression samples
    are compared.

    Parameters
    ----------
    generator : GeneratorSpec
    scheme : {"explicit", "implicit_picard"}
    basis_degree : int
        Total degree of the polynomial basis in the current ``W`` state.
    ridge : float
        Added to the diagonal of the normalised Gram matrix.
    frozen_b_index : int
        Which ``B`` path of the training bundle is frozen, unless increments
        are passed to ``fit`` explicitly.
    """

    def __init__(self, generator=None, scheme="explicit", basis_degree=1, picard_max_iters=20,
                 picard_tol=1e-10, picard_init="explicit", ridge=1e-10, frozen_b_index=0,
                 max_condition=1e12):
        self.generator = generator
        self.scheme = scheme
        self.basis_degree = basis_degree
        self.picard_max_iters = picard_max_iters
        self.picard_tol = picard_tol
        self.picard_init = picard_init
        self.ridge = ridge
        self.frozen_b_index = frozen_b_index
        self.max_condition = max_condition

    # -- validation
    def _check_inputs(self, bundle, backward_increments):
        gen = self.generator
        if gen is None:
            raise ConfigurationError("BDSDESolver needs a generator")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        if not isinstance(bundle, BrownianBundle):
            raise ConfigurationError("expected a BrownianBundle")
        if bundle.dim_d != gen.dim_d or bundle.dim_l != gen.dim_l:
            raise ConfigurationError(
                f"bundle dims (d={bundle.dim_d}, l={bundle.dim_l}) do not match generator "
                f"(d={gen.dim_d}, l={gen.dim_l})")
        if backward_increments is None:
            dB = bundle.frozen_dB(self.frozen_b_index)
        else:
            dB = np.asarray(backward_increments, dtype=float)
            if dB.shape != (bundle.grid.steps_N, gen.dim_l):
                raise ConfigurationError(
                    f"backward increments must have shape {(bundle.grid.steps_N, gen.dim_l)}")
        check_finite(dB[None], "backward increments")
        grid = bundle.grid
        if self.scheme == "explicit" and grid.dt * max(0.0, gen.mu) >= 1.0:
            raise PreconditionError(
                f"explicit scheme needs dt * mu < 1, got dt={grid.dt:g}, mu={gen.mu:g}")
        return grid, dB

    # -- one backward step, shared by fit and predict
    def _step(self, i, grid, X, coefs, Y_next, Z, dW_i, dB_i):
        gen = self.generator
        M, k, d = Y_next.shape[0], gen.dim_k, gen.dim_d
        Ey = X @ coefs["y"]
        Z_i = (X @ coefs["z"]).reshape(M, k, d)
        Eg = (X @ coefs["g"]).reshape(M, k, gen.dim_l)
        gB = Eg @ dB_i
        if self.scheme == "explicit":
            return X @ coefs["f"] + gB, Z_i, Ey, 0
        t_i, dt = grid.nodes[i], grid.dt
        if self.picard_init == "explicit":
            y = Ey + check_finite(gen.eval_f(t_i, Ey, Z_i), "f", step=i) * dt + gB
        else:
            y = np.zeros_like(Ey)
        residual = np.inf
        for it in range(1, self.picard_max_iters + 1):
            y_new = Ey + check_finite(gen.eval_f(t_i, y, Z_i), "f", step=i) * dt + gB
            residual = float(np.max(np.abs(y_new - y))) if y.size else 0.0
            y = y_new
            if residual <= self.picard_tol:
                return y, Z_i, Ey, it
        raise ConvergenceError(
            f"Picard iteration did not converge at step {i} within "
            f"{self.picard_max_iters} iterations (residual {residual:.3e})",
            step=i, residual=residual)

    def _regress(self, i, X):
        """Ridge least squares of each target column on ``X``."""
        M = X.shape[0]
        gram = np.einsum("mi,mj->ij", X, X) / M
        gram[np.diag_indices_from(gram)] += self.ridge
        cond = float(np.linalg.cond(gram))
        if not np.isfinite(cond) or cond > self.max_condition:
            raise RegressionError(
                f"regression at step {i} is singular (condition number {cond:.3e})",
                step=i, condition_number=cond)
        factor = cho_factor(gram)

        def solve(T):
            return cho_solve(factor, np.einsum("mi,mt->it", X, T) / M)

        return solve, cond

    def fit(self, bundle, backward_increments=None):
        gen = self.generator
        grid, dB = self._check_inputs(bundle, backward_increments)
        N, dt = grid.steps_N, grid.dt
        W, dW = bundle.W, bundle.dW
        M, k, d, l = bundle.paths_M, gen.dim_k, gen.dim_d, gen.dim_l
        Y = np.empty((M, N + 1, k))
        Z = np.empty((M, N, k, d))
        Y[:, N] = check_finite(gen.eval_xi(W), "xi")
        coefs, degrees, conds, iters, resid_var = [None] * N, [0] * N, [0.0] * N, [0] * N, [0.0] * N
        for i in range(N - 1, -1, -1):
            X, deg = self._design(W[:, i], grid.nodes[i])
            if deg and X.shape[1] > 1 and np.ptp(W[:, i]) < 1e-12:
                X, deg = np.ones((M, 1)), 0
            solve, cond = self._regress(i, X)
            Y_next = Y[:, i + 1]
            c_y = solve(Y_next)
            # control variate: (Y_{i+1} - E[Y_{i+1}|W_i]) dW has the same conditional mean
            centred = Y_next - X @ c_y
            z_target = (centred[:, :, None] * dW[:, i][:, None, :]).reshape(M, k * d) / dt
            c_z = solve(z_target)
            Z_i = (X @ c_z).reshape(M, k, d)
            Z_next = Z[:, i + 1] if i + 1 < N else Z_i
            t_next = grid.nodes[i + 1]
            g_val = check_finite(gen.eval_g(t_next, Y_next, Z_next), "g", step=i)
            c = {"y": c_y, "z": c_z, "g": solve(g_val.reshape(M, k * l))}
            if self.scheme == "explicit":
                f_val = check_finite(gen.eval_f(t_next, Y_next, Z_i), "f", step=i)
                c["f"] = solve(Y_next + f_val * dt)
            Y[:, i], Z[:, i], Ey, iters[i] = self._step(i, grid, X, c, Y_next, Z, dW[:, i], dB[i])
            check_finite(Y[:, i], "Y", step=i)
            coefs[i], degrees[i], conds[i] = c, deg, cond
            resid_var[i] = float(np.mean(np.sum((Y_next - Ey) ** 2, axis=-1)))
        self.coefs_ = coefs
        self.degrees_ = degrees
        self.dB_ = dB
        self.grid_ = grid
        self.solution_ = SolutionEnsemble(
            Y=Y, Z=Z, frozen_B_index=self._frozen_index(backward_increments), grid=grid,
            W=W, dB=dB,
            diagnostics={"condition_numbers": conds, "picard_iterations": iters,
                         "basis_degrees": degrees, "scheme": self.scheme,
                         "one_step_residual_var": resid_var},
        )
        return self

    def _design(self, W_i, t_i):
        return _basis(W_i, t_i, self.basis_degree)

    def _frozen_index(self, backward_increments):
        return int(self.frozen_b_index) if backward_increments is None else -1

    def predict(self, bundle):
        """Evaluate the fitted scheme on the forward paths of ``bundle``."""
        check_is_fitted(self, "coefs_")
        gen = self.generator
        grid = self.grid_
        if bundle.grid.steps_N != grid.steps_N or bundle.grid.horizon_T != grid.horizon_T:
            raise ConfigurationError("bundle grid differs from the fitted grid")
        if bundle.dim_d != gen.dim_d:
            raise ConfigurationError("bundle W dimension does not match the generator")
        N = grid.steps_N
        M, k, d = bundle.paths_M, gen.dim_k, gen.dim_d
        W, dW = bundle.W, bundle.dW
        Y = np.empty((M, N + 1, k))
        Z = np.empty((M, N, k, d))
        Y[:, N] = check_finite(gen.eval_xi(W), "xi")
        iters = [0] * N
        for i in range(N - 1, -1, -1):
            X, _ = _basis(W[:, i], grid.nodes[i], self.degrees_[i])
            Y[:, i], Z[:, i], _, iters[i] = self._step(
                i, grid, X, self.coefs_[i], Y[:, i + 1], Z, dW[:, i], self.dB_[i])
            check_finite(Y[:, i], "Y", step=i)
        return SolutionEnsemble(
            Y=Y, Z=Z, frozen_B_index=self.solution_.frozen_B_index, grid=grid, W=W, dB=self.dB_,
            diagnostics={"condition_numbers": self.solution_.diagnostics["condition_numbers"],
                         "picard_iterations": iters, "basis_degrees": list(self.degrees_),
                         "scheme": self.scheme},
        )


def _sub_bundle(bundle, index):
    return BrownianBundle(bundle.grid, bundle.dW[index], bundle.dB[index], bundle.master_seed,
                          bundle.refine_to)


def _batch_stderr(gen, bundle, dB, config):
    """Standard error of ``Y_0`` from independent solves on disjoint path batches."""
    batches = np.array_split(np.arange(bundle.paths_M), config.stderr_batches)
    y0 = []
    for idx in batches:
        est = BDSDESolver(gen, **config.estimator_params())
        est.fit(_sub_bundle(bundle, idx), backward_increments=dB)
        y0.append(est.solution_.Y[:, 0].mean(axis=0))
    y0 = np.asarray(y0)
    return y0.std(axis=0, ddof=1) / np.sqrt(len(batches))


def solve_bdsde(gen, grid, bundle, config=None):
    """Solve on the frozen ``B`` path ``config.frozen_b_index`` of ``bundle``.

    With ``config.regression_seed`` set, the regressions are fitted on an
    independent bundle drawn with that seed (same frozen ``B`` increments,
    same refinement coupling) and then evaluated on ``bundle``.
    """
    config = config or SolverConfig()
    if bundle.grid != grid:
        raise ConfigurationError("bundle was sampled on a different grid")
    dB = bundle.frozen_dB(config.frozen_b_index)
    est = BDSDESolver(gen, **config.estimator_params())
    if config.regression_seed is None:
        sol = est.fit(bundle).solution_
        train = bundle
    else:
        train = sample_brownian(grid, bundle.paths_M, bundle.dim_d, bundle.dim_l,
                                master_seed=config.regression_seed, refine_to=bundle.refine_to)
        est.fit(train, backward_increments=dB)
        sol = est.predict(bundle)
    sol.frozen_B_index = config.frozen_b_index
    if config.stderr_batches and train.paths_M >= 2 * config.stderr_batches:
        sol.diagnostics["y0_stderr"] = _batch_stderr(gen, train, dB, config)
    sol.diagnostics["regression_seed"] = config.regression_seed
    return sol


def solve_over_b_paths(gen, grid, bundle, config=None):
    """One ``SolutionEnsemble`` per frozen ``B`` path ``0 .. b_path_count-1``."""
    config = config or SolverConfig()
    out = []
    for b in range(config.b_path_count):
        cfg = SolverConfig(**{**config.__dict__, "frozen_b_index": b})
        out.append(solve_bdsde(gen, grid, bundle, cfg))
    return out


# ----------------------------------------------------------- nested MC oracle

@dataclass
class OracleResult:
    """Nested Monte Carlo estimate of ``Y_0`` (``outer`` independent trees)."""

    y0_samples: np.ndarray
    z0_samples: np.ndarray
    steps_N: int
    inner: int

    @property
    def y0(self):
        return self.y0_samples.mean(axis=0)

    @property
    def y0_stderr(self):
        n = self.y0_samples.shape[0]
        if n < 2:
            return np.zeros(self.y0_samples.shape[1])
        return self.y0_samples.std(axis=0, ddof=1) / np.sqrt(n)


def nested_mc_oracle(gen, grid, backward_increments, config=None, *, outer=16, w0=None,
                     seed=0):
    """Same recursion as the regression scheme, with tree conditional expectations.

    Every node branches into ``config.nested_inner`` antithetic children, so
    conditional expectations are plain averages over fresh sub-simulations
    and carry no regression bias. The forward path starts at ``w0``.
    """
    config = config or SolverConfig()
    N, dt = grid.steps_N, grid.dt
    if N > 8:
        raise PreconditionError(f"nested oracle supports N <= 8, got {N}")
    outer = check_positive_int(outer, "outer")
    inner, k, d, l = config.nested_inner, gen.dim_k, gen.dim_d, gen.dim_l
    leaves = outer * inner**N
    if leaves * (N + 1) * d > config.nested_budget:
        raise BudgetExceededError(
            f"nested oracle needs {leaves * (N + 1) * d} path entries "
            f"(budget {config.nested_budget})")
    dB = np.asarray(backward_increments, dtype=float).reshape(N, l)
    if config.scheme == "explicit" and dt * max(0.0, gen.mu) >= 1.0:
        raise PreconditionError("explicit scheme needs dt * mu < 1")
    rng = np.random.default_rng(seed)
    start = np.zeros(d) if w0 is None else np.asarray(w0, dtype=float).reshape(d)
    paths = np.broadcast_to(start, (outer, 1, d)).copy()
    increments = []
    for i in range(N):
        half = rng.standard_normal((paths.shape[0], inner // 2, d)) * np.sqrt(dt)
        inc = np.concatenate([half, -half], axis=1)
        increments.append(inc)
        parent = np.repeat(paths, inner, axis=0)
        paths = np.concatenate([parent, parent[:, -1:] + inc.reshape(-1, 1, d)], axis=1)
    Y = check_finite(gen.eval_xi(paths), "xi")
    Z_child = None
    for i in range(N - 1, -1, -1):
        nodes = Y.shape[0] // inner
        Yc = Y.reshape(nodes, inner, k)
        inc = increments[i]
        Ey = Yc.mean(axis=1)
        Z_i = np.mean((Yc - Ey[:, None])[:, :, :, None] * inc[:, :, None, :], axis=1) / dt
        Z_rep = np.repeat(Z_i, inner, axis=0)
        Z_next = Z_rep if Z_child is None else Z_child
        g_val = check_finite(gen.eval_g(grid.nodes[i + 1], Y, Z_next), "g", step=i)
        gB = g_val.reshape(nodes, inner, k, l).mean(axis=1) @ dB[i]
        if config.scheme == "explicit":
            f_val = check_finite(gen.eval_f(grid.nodes[i + 1], Y, Z_rep), "f", step=i)
            Y = (Yc + f_val.reshape(nodes, inner, k) * dt).mean(axis=1) + gB
        else:
            y = Ey + gen.eval_f(grid.nodes[i], Ey, Z_i) * dt + gB
            for _ in range(config.picard_max_iters):
                y_new = Ey + check_finite(gen.eval_f(grid.nodes[i], y, Z_i), "f", step=i) * dt + gB
                residual = float(np.max(np.abs(y_new - y)))
                y = y_new
                if residual <= config.picard_tol:
                    break
            else:
                raise ConvergenceError(f"oracle Picard iteration failed at step {i}",
                                       step=i, residual=residual)
            Y = y
        Z_child = Z_i
    return OracleResult(y0_samples=Y, z0_samples=Z_child, steps_N=N, inner=inner)


# ------------------------------------------------------------------- norms

@dataclass(frozen=True)
class NormReport:
    s_p: float
    m_p: float
    p: float


def lp_norms(sol, p):
    """Discrete ``S^p`` and ``M^p`` norms (metric convention for ``p < 1``)."""
    if not p > 0:
        raise ConfigurationError(f"p must be positive, got {p!r}")
    power = min(1.0, 1.0 / p)
    sup_y = np.max(np.linalg.norm(sol.Y, axis=-1), axis=1)
    quad_z = np.sum(np.sum(sol.Z**2, axis=(-2, -1)), axis=1) * sol.grid.dt
    s_p = float(np.mean(sup_y**p) ** power)
    m_p = float(np.mean(quad_z ** (p / 2)) ** power)
    return NormReport(s_p=s_p, m_p=m_p, p=float(p))
