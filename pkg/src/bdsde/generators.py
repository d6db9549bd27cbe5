"""BDSDE data ``(xi, f, g)``, sampling-based assumption checks and truncations.

Callables are vectorised over paths:

* ``f(t, y, z) -> (M, k)`` and ``g(t, y, z) -> (M, k, l)`` with ``y`` of shape
  ``(M, k)`` and ``z`` of shape ``(M, k, d)``;
* ``xi(W) -> (M, k)`` where ``W`` is the ``(M, N+1, d)`` forward path.
"""

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._validation import as_batch, check_finite, check_positive_real
from .exceptions import ConfigurationError, EvaluationError


@dataclass(frozen=True)
class GeneratorSpec:
    """The data triple ``(xi, f, g)`` with its structural constants.

    ``lam``, ``mu`` and ``alpha`` are the constants the caller claims for the
    Lipschitz, monotonicity and contraction conditions; ``validate_assumptions``
    tests the claims. ``phi`` is the growth bound used by the H4 check.
    ``closed_form(grid, W, B_path)``, when given, returns the exact ``Y`` on the
    grid nodes as an ``(M, N+1, k)`` array.
    """

    dim_k: int
    dim_d: int
    dim_l: int
    f: Callable
    g: Callable
    xi: Callable
    lam: float = 1.0
    mu: float = 0.0
    alpha: float = 0.5
    p: float = 2.0
    phi: Optional[Callable] = None
    name: str = "custom"
    closed_form: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        for attr in ("dim_k", "dim_d", "dim_l"):
            value = getattr(self, attr)
            if not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"{attr} must be a positive integer, got {value!r}")
        check_positive_real(self.lam, "lambda")
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not self.p > 1:
            raise ConfigurationError(f"p must be > 1, got {self.p!r}")
        if not math.isfinite(self.mu):
            raise ConfigurationError("mu must be finite")

    def f0(self, t, n_paths=1):
        """``f(t, 0, 0)`` per path, shape ``(n_paths, k)``."""
        y, z = self.zeros(n_paths)
        return as_batch(self.f(t, y, z), (self.dim_k,), n_paths, "f")

    def g0(self, t, n_paths=1):
        y, z = self.zeros(n_paths)
        return as_batch(self.g(t, y, z), (self.dim_k, self.dim_l), n_paths, "g")

    def zeros(self, n_paths):
        return np.zeros((n_paths, self.dim_k)), np.zeros((n_paths, self.dim_k, self.dim_d))

    def eval_f(self, t, y, z):
        return as_batch(self.f(t, y, z), (self.dim_k,), y.shape[0], "f")

    def eval_g(self, t, y, z):
        return as_batch(self.g(t, y, z), (self.dim_k, self.dim_l), y.shape[0], "g")

    def eval_xi(self, W):
        return as_batch(self.xi(W), (self.dim_k,), W.shape[0], "xi")


# ---------------------------------------------------------------- truncations

def q_n(z, n, axis=None):
    """Radial projection ``z * n / max(|z|, n)`` onto the ball of radius ``n``.

    ``axis`` selects the axes forming one vector (``None``: the whole array),
    so a batch of matrices is projected with ``axis=(-2, -1)``. Inside the
    ball the input is returned unchanged, bit for bit.
    """
    n = check_positive_real(n, "n")
    z = np.asarray(z, dtype=float)
    norm = np.sqrt(np.sum(z * z, axis=axis, keepdims=axis is not None))
    return z * (n / np.maximum(norm, n))


def theta_r(y, r):
    """Radial cut-off: 1 on ``|y| <= r``, 0 on ``|y| >= r + 1``.

    In between it is the quintic smoothstep ``1 - s^3 (10 - 15 s + 6 s^2)``
    of ``s = |y| - r``, which is C^2 with ``|theta'| <= 15/8``.
    """
    r = check_positive_real(r, "r")
    norm = np.linalg.norm(np.asarray(y, dtype=float), axis=-1)
    s = np.clip(norm - r, 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _lattice_ball(r, dim, spacing, max_points):
    """Points of ``spacing * Z^dim`` strictly inside the ball of radius ``r``."""
    m = int(math.ceil(r / spacing))
    count = (2 * m + 1) ** dim
    if count > max_points:
        raise ConfigurationError(
            f"psi_r lattice needs {count} points (> max_points={max_points}); "
            "increase spacing"
        )
    axis = np.arange(-m, m + 1) * spacing
    pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return pts[np.linalg.norm(pts, axis=1) < r]


def psi_r(gen, r, t, spacing=2.0**-6, max_points=2_000_000):
    """Lower estimate of ``sup_{|y| < r} |f(t, y, 0) - f(t, 0, 0)|``.

    The supremum is taken over the lattice ``spacing * Z^k`` inside the open
    ball. Lattices with dyadic spacings are nested and the lattice for a
    smaller radius is a subset of the one for a larger radius, so the estimate
    is nondecreasing in ``r`` and under refinement.
    """
    r = check_positive_real(r, "r")
    pts = _lattice_ball(r, gen.dim_k, spacing, max_points)
    z = np.zeros((pts.shape[0], gen.dim_k, gen.dim_d))
    vals = gen.eval_f(t, pts, z)
    f0 = gen.f0(t, 1)
    diff = np.linalg.norm(check_finite(vals - f0, "f on psi_r lattice"), axis=-1)
    return float(np.max(diff))


@dataclass(frozen=True)
class TruncationParams:
    r: float
    n: float

    def __post_init__(self):
        check_positive_real(self.r, "r")
        check_positive_real(self.n, "n")


def step1_radius(gen, xi_bound, f0_bound, horizon_T=1.0, margin=0.01, min_radius=1e-6):
    """Radius ``exp((1 + lam^2) T) (xi_bound + T f0_bound) (1 + margin)``.

    The caller certifies ``|xi| <= xi_bound`` and ``|f(t, 0, 0)| <= f0_bound``.
    Degenerate data (both bounds zero) return ``min_radius``.
    """
    for value, name in ((xi_bound, "xi_bound"), (f0_bound, "f0_bound")):
        if not math.isfinite(value) or value < 0:
            raise ConfigurationError(f"{name} must be finite and >= 0, got {value!r}")
    T = check_positive_real(horizon_T, "horizon_T")
    r = math.exp((1.0 + gen.lam**2) * T) * (xi_bound + T * f0_bound) * (1.0 + margin)
    return max(r, min_radius)


def build_h_n(gen, params, psi_spacing=2.0**-6):
    """Generator with drift ``h_n`` from the bounded-data approximation step.

    ``h_n(t,y,z) = theta_r(y) (f(t,y,q_n(z)) - f0_t) n / max(psi_{r+1}(t), n) + f0_t``;
    ``g`` and ``xi`` are kept. On the region where no truncation is active
    (``|y| <= r``, ``|z| <= n``, ``psi_{r+1}(t) <= n``) ``h_n`` returns ``f``
    itself.
    """
    r, n = params.r, params.n

    @functools.lru_cache(maxsize=4096)
    def scale_at(t):
        return n / max(psi_r(gen, r + 1.0, t, spacing=psi_spacing), n)

    def h_n(t, y, z):
        y = np.asarray(y, dtype=float)
        zq = q_n(z, n, axis=(-2, -1))
        f_q = gen.eval_f(t, y, zq)
        f0 = gen.f0(t, y.shape[0])
        theta = theta_r(y, r)[:, None]
        s = scale_at(float(t))
        damped = theta * (f_q - f0) * s + f0
        if s == 1.0:
            return np.where(theta == 1.0, f_q, damped)
        return damped

    return dataclasses.replace(gen, f=h_n, name=f"{gen.name}|h_n(r={r:g},n={n:g})",
                               closed_form=None)


def build_step2_data(gen, n):
    """Data ``(q_n(xi), f - f0 + q_n(f0), g)`` of the general-data approximation."""
    n = check_positive_real(n, "n")

    def xi_n(W):
        return q_n(gen.eval_xi(W), n, axis=-1)

    def f_n(t, y, z):
        val = gen.eval_f(t, y, z)
        f0 = gen.f0(t, val.shape[0])
        inside = np.linalg.norm(f0, axis=-1, keepdims=True) <= n
        return np.where(inside, val, val - f0 + q_n(f0, n, axis=-1))

    return dataclasses.replace(gen, f=f_n, xi=xi_n, name=f"{gen.name}|trunc(n={n:g})",
                               closed_form=None)


def scale_data(gen, kappa):
    """Problem whose solution is ``kappa`` times the solution for ``gen``.

    ``xi -> kappa xi``, ``f -> kappa f(t, y/kappa, z/kappa)`` and likewise for
    ``g``. This multiplies ``f0`` and ``g0`` by ``kappa`` and leaves ``lam``,
    ``mu`` and ``alpha`` unchanged; for linear data it is plain scaling.
    """
    kappa = check_positive_real(kappa, "kappa")

    def f(t, y, z):
        return kappa * gen.eval_f(t, y / kappa, z / kappa)

    def g(t, y, z):
        return kappa * gen.eval_g(t, y / kappa, z / kappa)

    def xi(W):
        return kappa * gen.eval_xi(W)

    phi = None if gen.phi is None else (lambda s: kappa * gen.phi(s / kappa))
    closed = None
    if gen.closed_form is not None:
        def closed(grid, W, B_path):
            return kappa * gen.closed_form(grid, W, B_path)
    return dataclasses.replace(gen, f=f, g=g, xi=xi, phi=phi, closed_form=closed,
                               name=f"{gen.name}|x{kappa:g}")


def shifted_generator(gen, y_shift, z_shift):
    """Drift and diffusion of the difference of two solutions.

    ``h(t,y,z) = f(t, y+y', z+z') - f(t, y', z')`` and likewise for ``g``,
    with terminal value 0. ``y_shift`` ``(k,)`` and ``z_shift`` ``(k, d)`` may
    also be callables of ``t``.
    """
    def shift(t, n_paths):
        ys = y_shift(t) if callable(y_shift) else y_shift
        zs = z_shift(t) if callable(z_shift) else z_shift
        ys = np.broadcast_to(np.asarray(ys, dtype=float), (n_paths, gen.dim_k))
        zs = np.broadcast_to(np.asarray(zs, dtype=float), (n_paths, gen.dim_k, gen.dim_d))
        return ys, zs

    def h(t, y, z):
        ys, zs = shift(t, y.shape[0])
        return gen.eval_f(t, y + ys, z + zs) - gen.eval_f(t, ys, zs)

    def k(t, y, z):
        ys, zs = shift(t, y.shape[0])
        return gen.eval_g(t, y + ys, z + zs) - gen.eval_g(t, ys, zs)

    def xi(W):
        return np.zeros((W.shape[0], gen.dim_k))

    return dataclasses.replace(gen, f=h, g=k, xi=xi, phi=None, closed_form=None,
                               name=f"{gen.name}|shifted")


# ------------------------------------------------------------------ validation

CONDITIONS = ("H2i", "H2ii", "H2iii", "H3ii", "H3iii", "H4")


@dataclass(frozen=True)
class SamplingCloud:
    """Box from which validation tuples ``(t, y, z, y', z')`` are drawn."""

    count: int = 10_000
    seed: int = 0
    y_range: tuple = (-5.0, 5.0)
    z_range: tuple = (-5.0, 5.0)
    t_range: tuple = (0.0, 1.0)
    t_values: int = 17
    tol: float = 1e-9
    continuity_step: float = 1e-7
    continuity_tol: float = 1e-4
    max_violations: int = 20

    def __post_init__(self):
        for name in ("y_range", "z_range", "t_range"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigurationError(f"{name} must be a finite interval, got {(lo, hi)}")
        if self.count < 1:
            raise ConfigurationError("count must be positive")


@dataclass
class AssumptionReport:
    """Result of one sampled condition.

    ``worst_ratio`` is the largest observed ``lhs / rhs`` of the inequality,
    except for ``H2ii`` where it is the largest one-sided slope
    ``<y-y', f(t,y,z)-f(t,y',z)> / |y-y'|^2`` (to be compared with ``mu``),
    for ``H3ii`` where it is the largest increment over ``continuity_step``
    divided by ``continuity_tol`` and for ``H3iii`` where it is ``max |g(t,0,0)|``.
    ``passed`` means that no violation was found at this sample size.
    """

    checked_condition: str
    samples_tested: int
    worst_ratio: float
    violations: list
    passed: bool
    violation_count: int = 0
    threshold: float = 1.0

    def to_dict(self):
        return {
            "checked_condition": self.checked_condition,
            "samples_tested": self.samples_tested,
            "worst_ratio": self.worst_ratio,
            "threshold": self.threshold,
            "violation_count": self.violation_count,
            "passed": self.passed,
            "violations": [
                {"t": v[0], "y": np.asarray(v[1]).tolist(), "z": np.asarray(v[2]).tolist(),
                 "y_prime": np.asarray(v[3]).tolist(), "z_prime": np.asarray(v[4]).tolist(),
                 "ratio": v[5]}
                for v in self.violations
            ],
        }


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0),
                        np.where(num > 0, np.inf, 0.0))


def _report(name, ratio, threshold, tol, samples, cloud):
    t, y, z, y2, z2 = samples
    bad = np.flatnonzero(ratio > threshold + tol * max(1.0, abs(threshold)))
    bad = bad[np.argsort(-ratio[bad], kind="stable")]
    violations = [(float(t[i]), y[i], z[i], y2[i], z2[i], float(ratio[i]))
                  for i in bad[: cloud.max_violations]]
    return AssumptionReport(
        checked_condition=name, samples_tested=int(ratio.shape[0]),
        worst_ratio=float(np.max(ratio)), violations=violations, passed=bad.size == 0,
        violation_count=int(bad.size), threshold=float(threshold),
    )


def validate_assumptions(gen, cloud=None, conditions=None):
    """Check the structural conditions on random tuples ``(t, y, z, y', z')``.

    The z-Lipschitz condition is tested with ``y`` held fixed. ``H4`` is
    skipped when ``gen.phi`` is ``None``. Sampling can expose violations but
    cannot prove a condition.
    """
    cloud = cloud or SamplingCloud()
    conditions = conditions or [c for c in CONDITIONS if c != "H4" or gen.phi is not None]
    unknown = set(conditions) - set(CONDITIONS)
    if unknown:
        raise ConfigurationError(f"unknown conditions {sorted(unknown)}")
    rng = np.random.default_rng(cloud.seed)
    n, k, d = cloud.count, gen.dim_k, gen.dim_d
    # a small set of times keeps the number of (vectorised) calls per t low
    t = rng.choice(np.linspace(*cloud.t_range, max(1, cloud.t_values)), size=n)
    y = rng.uniform(*cloud.y_range, size=(n, k))
    y2 = rng.uniform(*cloud.y_range, size=(n, k))
    z = rng.uniform(*cloud.z_range, size=(n, k, d))
    z2 = rng.uniform(*cloud.z_range, size=(n, k, d))
    samples = (t, y, z, y2, z2)

    def f_at(ys, zs):
        out = np.empty((n, k))
        for tv in np.unique(t):
            idx = t == tv
            out[idx] = gen.eval_f(tv, ys[idx], zs[idx])
        return _checked(out, "f", samples)

    def g_at(ys, zs):
        out = np.empty((n, k, gen.dim_l))
        for tv in np.unique(t):
            idx = t == tv
            out[idx] = gen.eval_g(tv, ys[idx], zs[idx])
        return _checked(out, "g", samples)

    reports = []
    dy2 = np.sum((y - y2) ** 2, axis=-1)
    dz2 = np.sum((z - z2) ** 2, axis=(-2, -1))
    for name in conditions:
        if name == "H2i":
            lhs = np.sum((f_at(y, z) - f_at(y, z2)) ** 2, axis=-1)
            reports.append(_report(name, _ratio(lhs, gen.lam * dz2), 1.0, cloud.tol, samples, cloud))
        elif name == "H2ii":
            inner = np.sum((y - y2) * (f_at(y, z) - f_at(y2, z)), axis=-1)
            reports.append(_report(name, _ratio(inner, dy2), gen.mu, cloud.tol, samples, cloud))
        elif name == "H2iii":
            lhs = np.sum((g_at(y, z) - g_at(y2, z2)) ** 2, axis=(-2, -1))
            rhs = gen.lam * dy2 + gen.alpha * dz2
            reports.append(_report(name, _ratio(lhs, rhs), 1.0, cloud.tol, samples, cloud))
        elif name == "H3ii":
            h = cloud.continuity_step
            worst = np.zeros(n)
            for j in range(k):
                e = np.zeros(k)
                e[j] = h
                jump = np.linalg.norm(f_at(y + e, z) - f_at(y, z), axis=-1)
                worst = np.maximum(worst, jump / cloud.continuity_tol)
            reports.append(_report(name, worst, 1.0, 0.0, samples, cloud))
        elif name == "H3iii":
            zero_y = np.zeros_like(y)
            zero_z = np.zeros_like(z)
            g0 = np.sqrt(np.sum(g_at(zero_y, zero_z) ** 2, axis=(-2, -1)))
            reports.append(_report(name, g0, 0.0, 0.0, samples, cloud))
        elif name == "H4":
            if gen.phi is None:
                raise ConfigurationError("H4 needs a growth function phi on the generator")
            zero_z = np.zeros_like(z)
            lhs = np.linalg.norm(f_at(y, zero_z), axis=-1)
            f0 = np.linalg.norm(f_at(np.zeros_like(y), zero_z), axis=-1)
            rhs = f0 + np.asarray(gen.phi(np.linalg.norm(y, axis=-1)), dtype=float)
            reports.append(_report(name, _ratio(lhs, rhs), 1.0, cloud.tol, samples, cloud))
    return reports


def _checked(values, what, samples):
    flat = values.reshape(values.shape[0], -1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        t, y, z, y2, z2 = samples
        raise EvaluationError(
            f"non-finite {what} output at sample {i}: t={t[i]:.6g}, y={y[i].tolist()}, "
            f"z={z[i].tolist()}, y'={y2[i].tolist()}, z'={z2[i].tolist()}", path=i)
    return values


def lattice_points(r, dim, spacing):
    """Public wrapper around the lattice used by ``psi_r`` (handy for tests)."""
    return _lattice_ball(r, dim, spacing, max_points=10**8)


__all__ = [
    "GeneratorSpec", "q_n", "theta_r", "psi_r", "TruncationParams", "step1_radius",
    "build_h_n", "build_step2_data", "scale_data", "shifted_generator", "SamplingCloud",
    "AssumptionReport", "validate_assumptions", "CONDITIONS", "lattice_points",
]
