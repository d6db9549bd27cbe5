"""Built-in test problems (all with ``k = d = l = 1``).

Closed forms are written for the frozen backward driver ``B_path`` that the
solver conditions on.
"""

import ast
import re
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .generators import GeneratorSpec, SamplingCloud, validate_assumptions


def _t_column(grid):
    return grid.nodes[None, :, None]


def _zero_f(t, y, z):
    return np.zeros_like(y)


def _zero_g(t, y, z):
    return np.zeros((*y.shape, 1))


def _terminal_w(W):
    return W[:, -1, :1]


def zero():
    return GeneratorSpec(
        1, 1, 1, f=_zero_f, g=_zero_g, xi=lambda W: np.zeros((W.shape[0], 1)),
        phi=lambda s: np.zeros_like(s), name="zero",
        closed_form=lambda grid, W, B: np.zeros((W.shape[0], grid.steps_N + 1, 1)),
    )


def linear_drift(a=1.0):
    """``f = a y``, ``g = 0``, ``xi = W_T``; ``Y_t = exp(a (T - t)) W_t``."""
    a = float(a)

    def closed(grid, W, B):
        return np.exp(a * (grid.horizon_T - _t_column(grid))) * W[:, :, :1]

    return GeneratorSpec(
        1, 1, 1, f=lambda t, y, z: a * y, g=_zero_g, xi=_terminal_w,
        lam=1.0, mu=a, phi=lambda s: abs(a) * s, name=f"linear_drift(a={a:g})",
        closed_form=closed,
    )


def linear_g(beta=0.5):
    """``f = 0``, ``g = beta y``, ``xi = W_T``.

    With right-endpoint backward sums the solution is
    ``Y_t = W_t exp(beta (B_T - B_t) - beta^2 (T - t) / 2)``.
    """
    beta = float(beta)

    def closed(grid, W, B):
        rest = B[-1, 0] - B[:, 0]
        tau = grid.horizon_T - grid.nodes
        factor = np.exp(beta * rest - 0.5 * beta**2 * tau)
        return factor[None, :, None] * W[:, :, :1]

    return GeneratorSpec(
        1, 1, 1, f=_zero_f, g=lambda t, y, z: beta * y[:, :, None], xi=_terminal_w,
        lam=max(beta**2, 1e-12), mu=0.0, phi=lambda s: np.zeros_like(s),
        name=f"linear_g(beta={beta:g})", closed_form=closed,
    )


def constant_g(c=0.5):
    """``f = 0``, ``g = c``, ``xi = W_T``; ``Y_t = W_t + c (B_T - B_t)``."""
    c = float(c)

    def closed(grid, W, B):
        rest = B[-1, 0] - B[:, 0]
        return W[:, :, :1] + c * rest[None, :, None]

    return GeneratorSpec(
        1, 1, 1, f=_zero_f, g=lambda t, y, z: np.full((y.shape[0], 1, 1), c), xi=_terminal_w,
        lam=1.0, mu=0.0, phi=lambda s: np.zeros_like(s), name=f"constant_g(c={c:g})",
        closed_form=closed,
    )


def monotone_cubic(xi0=0.5, xi_amp=0.5):
    """``f = -y^3 + z``, ``g = 0``, ``xi = xi0 + xi_amp sin(W_T)`` (bounded).

    For ``xi_amp = 0`` the solution is deterministic:
    ``Y_t = xi0 / sqrt(1 + 2 xi0^2 (T - t))``.
    """
    xi0, xi_amp = float(xi0), float(xi_amp)
    closed = None
    if xi_amp == 0.0:
        def closed(grid, W, B):
            tau = grid.horizon_T - _t_column(grid)
            y = xi0 / np.sqrt(1.0 + 2.0 * xi0**2 * tau)
            return np.broadcast_to(y, (W.shape[0], grid.steps_N + 1, 1)).copy()

    return GeneratorSpec(
        1, 1, 1, f=lambda t, y, z: -(y**3) + z[:, :, 0], g=_zero_g,
        xi=lambda W: xi0 + xi_amp * np.sin(W[:, -1, :1]),
        lam=1.0, mu=0.0, phi=lambda s: s**3,
        name=f"monotone_cubic(xi0={xi0:g},xi_amp={xi_amp:g})", closed_form=closed,
    )


def quadratic_bad(xi0=0.5):
    """``f = y^2`` (not monotone), ``g = 0``, ``xi = xi0``.

    ``Y_t = xi0 / (1 - xi0 (T - t))`` while ``xi0 T < 1``.
    """
    xi0 = float(xi0)

    def closed(grid, W, B):
        tau = grid.horizon_T - _t_column(grid)
        if xi0 * grid.horizon_T >= 1.0:
            raise ConfigurationError("quadratic_bad closed form needs xi0 * T < 1")
        return np.broadcast_to(xi0 / (1.0 - xi0 * tau), (W.shape[0], grid.steps_N + 1, 1)).copy()

    return GeneratorSpec(
        1, 1, 1, f=lambda t, y, z: y**2, g=_zero_g,
        xi=lambda W: np.full((W.shape[0], 1), xi0), lam=1.0, mu=0.0,
        phi=lambda s: s**2, name=f"quadratic_bad(xi0={xi0:g})", closed_form=closed,
    )


def heavy_tail_xi(beta_tail=0.6, p=1.5):
    """``xi = |W_T|^(-beta_tail)``, ``f = -y``, ``g = 0.2 y``.

    ``xi`` is p-integrable iff ``beta_tail * p < 1`` and square integrable iff
    ``2 beta_tail < 1``.
    """
    beta_tail = float(beta_tail)
    return GeneratorSpec(
        1, 1, 1, f=lambda t, y, z: -y, g=lambda t, y, z: 0.2 * y[:, :, None],
        xi=lambda W: np.abs(W[:, -1, :1]) ** (-beta_tail),
        lam=0.04, mu=-1.0, p=float(p), phi=lambda s: s,
        name=f"heavy_tail_xi(beta_tail={beta_tail:g})",
    )


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    builder: object
    summary: str
    xi_bound: object = None  # callable(params) -> bound, for bounded problems
    f0_bound: float = 0.0


CATALOG = {
    "zero": CatalogEntry("zero", zero, "f = g = 0, xi = 0", lambda **kw: 0.0),
    "linear_drift": CatalogEntry("linear_drift", linear_drift, "f = a y, g = 0, xi = W_T"),
    "linear_g": CatalogEntry("linear_g", linear_g, "f = 0, g = beta y, xi = W_T"),
    "constant_g": CatalogEntry("constant_g", constant_g, "f = 0, g = c, xi = W_T"),
    "monotone_cubic": CatalogEntry(
        "monotone_cubic", monotone_cubic, "f = -y^3 + z, g = 0, xi = xi0 + xi_amp sin(W_T)",
        lambda xi0=0.5, xi_amp=0.5: abs(xi0) + abs(xi_amp)),
    "quadratic_bad": CatalogEntry(
        "quadratic_bad", quadratic_bad, "f = y^2 (violates monotonicity), xi = xi0",
        lambda xi0=0.5: abs(xi0)),
    "heavy_tail_xi": CatalogEntry(
        "heavy_tail_xi", heavy_tail_xi, "f = -y, g = 0.2 y, xi = |W_T|^-beta_tail"),
}

_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*(?:\((.*)\))?\s*$")


def parse_problem(spec):
    """Split ``"name(k=v, ...)"`` or ``"name(v)"`` into ``(name, params)``."""
    match = _CALL.match(spec)
    if not match:
        raise ConfigurationError(f"cannot parse problem {spec!r}")
    name, args = match.group(1), match.group(2)
    if not args:
        return name, {}
    try:
        call = ast.parse(f"_({args})", mode="eval").body
        positional = [ast.literal_eval(a) for a in call.args]
        keywords = {kw.arg: ast.literal_eval(kw.value) for kw in call.keywords}
    except (SyntaxError, ValueError) as exc:
        raise ConfigurationError(f"cannot parse arguments of problem {spec!r}") from exc
    if positional:
        keywords["__positional__"] = positional
    return name, keywords


def get_problem(name, params=None):
    """Build a catalog generator by name, e.g. ``get_problem("linear_drift", {"a": 2})``."""
    if "(" in name:
        name, parsed = parse_problem(name)
        params = {**parsed, **(params or {})}
    params = dict(params or {})
    if name not in CATALOG:
        raise ConfigurationError(f"unknown problem {name!r}; known: {sorted(CATALOG)}")
    positional = params.pop("__positional__", [])
    try:
        return CATALOG[name].builder(*positional, **params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for problem {name!r}: {exc}") from None


def problem_bounds(name, params=None):
    """``(xi_bound, f0_bound)`` for bounded catalog problems, else ``None``."""
    entry = CATALOG[name]
    if entry.xi_bound is None:
        return None
    return float(entry.xi_bound(**(params or {}))), entry.f0_bound


def assumption_profile(gen, count=20_000, seed=0):
    """``{condition: passed}`` from a validator run on the default cloud."""
    reports = validate_assumptions(gen, SamplingCloud(count=count, seed=seed, y_range=(-3, 3),
                                                      z_range=(-3, 3)))
    return {r.checked_condition: r.passed for r in reports}


def list_catalog(count=20_000):
    """One line per built-in problem: name, dims, assumption flags, closed form."""
    lines = []
    for name, entry in CATALOG.items():
        gen = entry.builder()
        profile = assumption_profile(gen, count=count)
        flags = []
        for cond, ok in profile.items():
            label = cond
            if cond == "H2ii":
                label = f"H2ii(mu={gen.mu:g})"
            flags.append(f"{label}:{'ok' if ok else 'VIOLATED'}")
        closed = "yes" if gen.closed_form is not None else "no"
        lines.append(
            f"{name:<15} k={gen.dim_k} d={gen.dim_d} l={gen.dim_l}  "
            f"{' '.join(flags)}  closed_form={closed}  # {entry.summary}"
        )
    return "\n".join(lines)
