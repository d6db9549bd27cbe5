"""Discrete forward/backward Itô integrals and checks of the L^p Itô-Tanaka formula.

Conventions
-----------
* Forward integrals against ``dW`` use left-endpoint sums ``sum_i H(t_i) dW_i``.
* Backward integrals against ``dB`` use right-endpoint sums
  ``sum_i G(t_{i+1}) dB_i``. The right-endpoint sum equals the left-endpoint
  one plus the discrete covariation ``sum_i dG_i dB_i``.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import as_batch, check_finite, check_p
from .exceptions import ConfigurationError, EvaluationError, PreconditionError


def _increments(source, attr, n_paths):
    """Return ``(M, N, dim)`` increments from a bundle or a raw array."""
    inc = getattr(source, attr, source)
    inc = np.asarray(inc, dtype=float)
    if inc.ndim == 2:  # one shared path, e.g. a frozen backward driver
        inc = np.broadcast_to(inc, (n_paths, *inc.shape))
    if inc.ndim != 3:
        raise ConfigurationError(f"increments must be 2-D or 3-D, got shape {inc.shape}")
    return inc


def _integrand(values, name):
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 2:  # k = d = 1 given as (M, N)
        vals = vals[:, :, None, None]
    if vals.ndim != 4:
        raise ConfigurationError(f"{name} must have shape (M, N, k, dim), got {vals.shape}")
    if not np.all(np.isfinite(vals)):
        path, step = np.argwhere(~np.isfinite(vals))[0][:2]
        raise EvaluationError(f"non-finite {name} at path {path}, step {step}",
                              path=int(path), step=int(step))
    return vals


def _stochastic_sum(vals, inc, cumulative):
    if vals.shape[:2] != inc.shape[:2] or vals.shape[3] != inc.shape[2]:
        raise ConfigurationError(
            f"integrand shape {vals.shape} does not match increments {inc.shape}"
        )
    terms = np.einsum("mnkd,mnd->mnk", vals, inc)
    if not cumulative:
        return terms.sum(axis=1)
    out = np.zeros((terms.shape[0], terms.shape[1] + 1, terms.shape[2]))
    np.cumsum(terms, axis=1, out=out[:, 1:])
    return out


def forward_ito(H_values, bundle, grid=None, *, cumulative=False):
    """Left-endpoint sum ``sum_i H(t_i) dW_i`` per path.

    ``H_values`` has shape ``(M, N, k, d)``; ``bundle`` is a ``BrownianBundle``
    or an ``(M, N, d)`` increment array. With ``cumulative=True`` the running
    integral on all ``N+1`` nodes is returned instead of the terminal value.
    """
    vals = _integrand(H_values, "forward integrand")
    inc = _increments(bundle, "dW", vals.shape[0])
    return _stochastic_sum(vals, inc, cumulative)


def backward_ito(G_values, bundle, grid=None, *, cumulative=False):
    """Right-endpoint sum ``sum_i G(t_{i+1}) dB_i`` per path.

    ``G_values[:, i]`` must hold the integrand at ``t_{i+1}``.
    """
    vals = _integrand(G_values, "backward integrand")
    inc = _increments(bundle, "dB", vals.shape[0])
    return _stochastic_sum(vals, inc, cumulative)


def hat(x):
    """Unit vector ``x/|x|`` along the last axis, and 0 where ``x = 0``."""
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(norm > 0, x / np.where(norm > 0, norm, 1.0), 0.0)
    return out


def c_of_p(p):
    """The constant ``p * min(p - 1, 1) / 2``."""
    p = check_p(p, 1.0)
    return p * min(p - 1.0, 1.0) / 2.0


class PowerOfNorm:
    """``phi(x) = u(x)**p`` with ``u(x) = (|x|^2 + eps^2)^(1/2)``.

    With ``epsilon = 0`` this is ``|x|^p`` and the derivative formulas carry
    the indicator of ``{x != 0}``; for ``p = 2`` the exact Hessian ``2I`` is
    used at the origin.
    """

    def __init__(self, p, epsilon=0.0):
        self.p = check_p(p, 1.0)
        if not np.isfinite(epsilon) or epsilon < 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {epsilon!r}")
        self.epsilon = float(epsilon)

    def _u(self, x):
        return np.sqrt(np.sum(x * x, axis=-1) + self.epsilon**2)

    def _upow(self, u, power):
        # u**power with the 1_{x != 0} convention when u can vanish
        if self.epsilon > 0:
            return u**power
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(u > 0, np.abs(u) ** power, 0.0)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self._u(x) ** self.p

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return self.p * self._upow(self._u(x), self.p - 2)[..., None] * x

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        u = self._u(x)
        k = x.shape[-1]
        eye = np.eye(k)
        upm2 = self._upow(u, self.p - 2)
        upm4 = self._upow(u, self.p - 4)
        outer = x[..., :, None] * x[..., None, :]
        hess = self.p * (upm2[..., None, None] * eye + (self.p - 2) * upm4[..., None, None] * outer)
        if self.epsilon == 0 and self.p == 2:
            hess = np.broadcast_to(2.0 * eye, hess.shape).copy()
        return hess

    def hessian_trace(self, x, A):
        """``trace(D^2 phi(x) A A^T)`` for batched ``x (..., k)`` and ``A (..., k, m)``."""
        x = np.asarray(x, dtype=float)
        A = np.asarray(A, dtype=float)
        u = self._u(x)
        fro2 = np.sum(A * A, axis=(-2, -1))
        proj2 = np.sum(np.einsum("...k,...km->...m", x, A) ** 2, axis=-1)
        if self.epsilon == 0 and self.p == 2:
            return 2.0 * fro2
        return self.p * (self._upow(u, self.p - 2) * fro2
                         + (self.p - 2) * self._upow(u, self.p - 4) * proj2)


def u_eps(x, epsilon):
    """Smoothed norm ``(|x|^2 + epsilon^2)^(1/2)``; see ``u_eps_gradient``/``u_eps_hessian``."""
    return PowerOfNorm(1.0, epsilon).value(x)


def u_eps_gradient(x, epsilon):
    x = np.asarray(x, dtype=float)
    return x / u_eps(x, epsilon)[..., None]


def u_eps_hessian(x, epsilon):
    x = np.asarray(x, dtype=float)
    u = u_eps(x, epsilon)[..., None, None]
    k = x.shape[-1]
    return (np.eye(k) * u**2 - x[..., :, None] * x[..., None, :]) / u**3


@dataclass(frozen=True)
class SemimartingaleSpec:
    """``X_t = X0 + int K ds + int G dB(backward) + int H dW``.

    Each integrand is called as ``fn(t, W_t, B_t)`` with ``W_t`` of shape
    ``(M, d)`` and ``B_t`` of shape ``(M, l)`` and returns ``(M, k)`` for ``K``,
    ``(M, k, l)`` for ``G`` and ``(M, k, d)`` for ``H``. ``K`` and ``H`` are
    read at left endpoints, ``G`` at right endpoints.
    """

    dim_k: int
    X0: np.ndarray
    K: Callable
    G: Callable
    H: Callable


@dataclass
class TanakaReport:
    p: float
    epsilon: float
    steps_N: int
    lhs: np.ndarray = field(repr=False)
    rhs_terms: dict = field(repr=False)
    residual: np.ndarray = field(repr=False)
    residual_rms: float = 0.0
    local_time_flag: bool = False

    TERMS = ("initial", "drift", "backward_stochastic", "forward_stochastic",
             "g_trace", "h_trace")

    def summary(self):
        return {
            "p": self.p,
            "epsilon": self.epsilon,
            "steps_N": self.steps_N,
            "paths_M": int(self.lhs.shape[0]),
            "lhs_mean": float(np.mean(self.lhs)),
            "rhs_terms_mean": {k: float(np.mean(v)) for k, v in self.rhs_terms.items()},
            "residual_mean": float(np.mean(self.residual)),
            "residual_rms": self.residual_rms,
            "local_time_flag": self.local_time_flag,
        }


def simulate_semimartingale(spec, bundle):
    """Euler path of ``X`` plus the integrand values used to build it."""
    grid = bundle.grid
    M, N = bundle.paths_M, grid.steps_N
    k, d, l = spec.dim_k, bundle.dim_d, bundle.dim_l
    X = np.empty((M, N + 1, k))
    X[:, 0] = np.broadcast_to(np.asarray(spec.X0, dtype=float), (M, k))
    K = np.empty((M, N, k))
    H = np.empty((M, N, k, d))
    G = np.empty((M, N, k, l))
    t = grid.nodes
    for i in range(N):
        K[:, i] = check_finite(as_batch(spec.K(t[i], bundle.W[:, i], bundle.B[:, i]), (k,), M, "K"),
                               "K", step=i)
        H[:, i] = check_finite(as_batch(spec.H(t[i], bundle.W[:, i], bundle.B[:, i]), (k, d), M, "H"),
                               "H", step=i)
        G[:, i] = check_finite(
            as_batch(spec.G(t[i + 1], bundle.W[:, i + 1], bundle.B[:, i + 1]), (k, l), M, "G"),
            "G", step=i + 1)
        X[:, i + 1] = (X[:, i] + K[:, i] * grid.dt
                       + np.einsum("mkl,ml->mk", G[:, i], bundle.dB[:, i])
                       + np.einsum("mkd,md->mk", H[:, i], bundle.dW[:, i]))
    return X, K, G, H


def evaluate_tanaka_identity(spec, bundle, grid=None, p=2.0, epsilon=0.0, *, min_abs=1e-6):
    """Simulate ``X`` and compare both sides of the L^p Itô-Tanaka formula.

    With ``epsilon > 0`` the function ``u_eps(x)**p`` replaces ``|x|^p``. For
    ``epsilon = 0`` and ``1 < p < 2`` every sampled ``|X_t|`` must exceed
    ``min_abs``. For ``p = 1`` and ``epsilon = 0`` the residual contains the
    local time and ``local_time_flag`` is set.
    """
    p = check_p(p, 1.0)
    grid = grid or bundle.grid
    X, K, G, H = simulate_semimartingale(spec, bundle)
    phi = PowerOfNorm(p, epsilon)
    local_time = p == 1.0 and epsilon == 0.0
    if epsilon == 0.0 and 1.0 < p < 2.0:
        smallest = float(np.min(np.linalg.norm(X, axis=-1)))
        if smallest <= min_abs:
            raise PreconditionError(
                f"epsilon=0 with p={p} needs |X_t| > {min_abs}; observed min {smallest:.3g}. "
                "Use epsilon > 0 for the smoothed check."
            )
    dt = grid.dt
    left, right = X[:, :-1], X[:, 1:]
    grad_left, grad_right = phi.gradient(left), phi.gradient(right)
    terms = {
        "initial": phi.value(X[:, 0]),
        "drift": np.sum(np.einsum("mnk,mnk->mn", grad_left, K), axis=1) * dt,
        "backward_stochastic": backward_ito(
            np.einsum("mnk,mnkl->mnl", grad_right, G)[:, :, None, :], bundle)[:, 0],
        "forward_stochastic": forward_ito(
            np.einsum("mnk,mnkd->mnd", grad_left, H)[:, :, None, :], bundle)[:, 0],
        "g_trace": -0.5 * np.sum(phi.hessian_trace(right, G), axis=1) * dt,
        "h_trace": 0.5 * np.sum(phi.hessian_trace(left, H), axis=1) * dt,
    }
    for name, value in terms.items():
        check_finite(value, f"Tanaka term {name}")
    lhs = phi.value(X[:, -1])
    total = np.zeros_like(lhs)
    for name in TanakaReport.TERMS:
        total = total + terms[name]
    residual = lhs - total
    return TanakaReport(
        p=p, epsilon=float(epsilon), steps_N=grid.steps_N, lhs=lhs, rhs_terms=terms,
        residual=residual, residual_rms=float(np.sqrt(np.mean(residual**2))),
        local_time_flag=local_time,
    )


@dataclass
class CorollaryCheck:
    """Per-path sides of the L^p inequality for a BDSDE solution at ``t_index``."""

    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    tolerance: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    violation_fraction: float = 0.0
    paths_checked: int = 0


def corollary_inequality(Y, Z, gen, grid, p, *, dW, dB, t_index=0, tol_sigma=3.0,
                         min_abs=None):
    """Evaluate both sides of the L^p inequality satisfied by a solution ``(Y, Z)``.

    ``Y`` has shape ``(M, N+1, k)`` and ``Z`` shape ``(M, N, k, d)``. The
    backward integrand ``g`` is taken at ``(t_{i+1}, Y_{i+1}, Z_{i+1})`` with
    ``Z_N = Z_{N-1}``. A path violates the inequality when
    ``lhs > rhs + tolerance``, the tolerance being ``tol_sigma`` times the
    path's discretization standard error: the quadratic-variation part
    ``2 * sum_i (c(p) |Y_i|^{p-2} (|Z_i|^2 + |g_{i+1}|^2) dt)^2`` plus
    ``sum_i (p |Y_i|^{p-1} <Y^_i, r_i>)^2``, where
    ``r_i = Y_i - Y_{i+1} - f_i dt - g_{i+1} dB_i + Z_i dW_i`` is the one-step
    residual of the discrete equation (zero for an exact solution).
    ``min_abs`` restricts the check to paths with ``|Y_s| > min_abs`` for all
    ``s`` in ``[t, T]``.
    """
    p = check_p(p, 1.0)
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    M, N1, k = Y.shape
    N = N1 - 1
    if Z.shape[:3] != (M, N, k):
        raise ConfigurationError(f"Z shape {Z.shape} does not match Y shape {Y.shape}")
    dW = _increments(dW, "dW", M)
    dB = _increments(dB, "dB", M)
    l = dB.shape[2]
    c = c_of_p(p)
    dt = grid.dt
    t = grid.nodes
    sl = slice(t_index, N)

    norm_y = np.linalg.norm(Y, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(norm_y > 0, norm_y ** (p - 2), 0.0) if p != 2 else np.ones_like(norm_y)
    yp1 = norm_y ** (p - 1) if p != 1 else np.ones_like(norm_y)
    yhat = hat(Y)

    Z_next = np.concatenate([Z[:, 1:], Z[:, -1:]], axis=1)
    f_vals = np.empty((M, N, k))
    g_vals = np.empty((M, N, k, l))
    for i in range(N):
        f_vals[:, i] = check_finite(as_batch(gen.f(t[i], Y[:, i], Z[:, i]), (k,), M, "f"),
                                    "f", step=i)
        g_vals[:, i] = check_finite(
            as_batch(gen.g(t[i + 1], Y[:, i + 1], Z_next[:, i]), (k, l), M, "g"), "g", step=i + 1)

    z2 = np.sum(Z**2, axis=(-2, -1))
    g2 = np.sum(g_vals**2, axis=(-2, -1))
    z_trace = c * weight[:, :-1] * z2 * dt
    g_trace = c * weight[:, 1:] * g2 * dt
    lhs = norm_y[:, t_index] ** p + np.sum(z_trace[:, sl], axis=1)

    drift = p * np.sum((yp1[:, :-1] * np.einsum("mnk,mnk->mn", yhat[:, :-1], f_vals))[:, sl],
                       axis=1) * dt
    back_integrand = (yp1[:, 1:, None] * np.einsum("mnk,mnkl->mnl", yhat[:, 1:], g_vals))
    fwd_integrand = (yp1[:, :-1, None] * np.einsum("mnk,mnkd->mnd", yhat[:, :-1], Z))
    back = backward_ito(back_integrand[:, sl, None, :], dB[:, sl])[:, 0]
    fwd = forward_ito(fwd_integrand[:, sl, None, :], dW[:, sl])[:, 0]
    rhs = norm_y[:, -1] ** p + drift + np.sum(g_trace[:, sl], axis=1) + p * back - p * fwd

    # one-step residual of the discrete equation; zero for an exact solution
    resid = (Y[:, :-1] - Y[:, 1:] - f_vals * dt - np.einsum("mnkl,mnl->mnk", g_vals, dB)
             + np.einsum("mnkd,mnd->mnk", Z, dW))
    resid_term = p * yp1[:, :-1] * np.einsum("mnk,mnk->mn", yhat[:, :-1], resid)
    variance = (2.0 * (z_trace[:, sl] ** 2 + g_trace[:, sl] ** 2) + resid_term[:, sl] ** 2)
    tolerance = tol_sigma * np.sqrt(np.sum(variance, axis=1))
    mask = np.ones(M, dtype=bool)
    if min_abs is not None:
        mask = np.min(norm_y[:, t_index:], axis=1) > min_abs
    violated = (lhs > rhs + tolerance) & mask
    checked = int(mask.sum())
    fraction = float(violated.sum() / checked) if checked else 0.0
    return CorollaryCheck(lhs=lhs, rhs=rhs, tolerance=tolerance, mask=mask,
                          violation_fraction=fraction, paths_checked=checked)
