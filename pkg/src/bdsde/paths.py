"""Time grids and seeded Brownian drivers.

Normal draws come from a counter-based generator: each variate is a pure
function of ``(master_seed, driver tag, path, step, coordinate)``, obtained by
hashing the counter with the SplitMix64 finaliser and mapping the 53-bit
uniform through the inverse normal CDF. Nothing is carried between draws, so
the arrays do not depend on how the work is split across threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from ._validation import check_nonnegative_int, check_positive_int, check_positive_real
from .exceptions import AllocationError, ConfigurationError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# Distinct tags keep the W and B streams on disjoint keys.
TAG_W = 0x57
TAG_B = 0x42


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``t_i = i * dt`` of ``[0, T]``."""

    horizon_T: float
    steps_N: int
    dt: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dt = self.horizon_T / self.steps_N
        nodes = np.arange(self.steps_N + 1, dtype=float) * dt
        nodes[-1] = self.horizon_T
        nodes.setflags(write=False)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "nodes", nodes)

    def refine(self, factor=2):
        return make_grid(self.horizon_T, self.steps_N * factor)


def make_grid(horizon_T, steps_N):
    horizon_T = check_positive_real(horizon_T, "horizon_T")
    steps_N = check_positive_int(steps_N, "steps_N")
    return TimeGrid(horizon_T, steps_N)


@dataclass(frozen=True)
class BrownianBundle:
    """Ensemble of forward (``W``) and backward-driver (``B``) paths.

    The increments ``dW`` (shape ``(M, N, d)``) and ``dB`` (``(M, N, l)``) are
    the primary data; ``W`` and ``B`` are their cumulative sums starting at 0.
    Arrays are read-only.
    """

    grid: TimeGrid
    dW: np.ndarray = field(repr=False)
    dB: np.ndarray = field(repr=False)
    master_seed: int = 0
    refine_to: int | None = None
    W: np.ndarray = field(init=False, repr=False)
    B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("dW", "dB"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 3 or arr.shape[1] != self.grid.steps_N:
                raise ConfigurationError(
                    f"{name} must have shape (M, {self.grid.steps_N}, dim), got {arr.shape}"
                )
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.dW.shape[0] != self.dB.shape[0]:
            raise ConfigurationError("W and B must have the same number of paths")
        object.__setattr__(self, "W", _to_path(self.dW))
        object.__setattr__(self, "B", _to_path(self.dB))

    @property
    def paths_M(self):
        return self.W.shape[0]

    @property
    def dim_d(self):
        return self.W.shape[2]

    @property
    def dim_l(self):
        return self.B.shape[2]

    def frozen_b(self, index=0):
        """Return ``B`` path ``index`` as an ``(N+1, l)`` array."""
        if not 0 <= index < self.paths_M:
            raise ConfigurationError(
                f"frozen B index {index} outside [0, {self.paths_M})"
            )
        return self.B[index]

    def frozen_dB(self, index=0):
        self.frozen_b(index)
        return self.dB[index]


def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


def _stream_key(master_seed, tag):
    seed = np.array([int(master_seed) & _MASK64], dtype=np.uint64)
    return _mix64(_mix64(seed) ^ np.uint64(tag))[0]


def counter_normals(master_seed, tag, path_index, n_steps, dim):
    """Standard normals of shape ``(len(path_index), n_steps, dim)``.

    Entry ``[m, s, c]`` depends only on ``(master_seed, tag, path_index[m], s, c)``.
    """
    key = _stream_key(master_seed, tag)
    paths = np.asarray(path_index, dtype=np.uint64)[:, None, None]
    counters = (
        np.arange(n_steps, dtype=np.uint64)[None, :, None] * np.uint64(dim)
        + np.arange(dim, dtype=np.uint64)[None, None, :]
    )
    with np.errstate(over="ignore"):
        per_path = _mix64(key + _GOLDEN * (paths + np.uint64(1)))
        bits = _mix64(per_path + _GOLDEN * (counters + np.uint64(1)))
    uniforms = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(uniforms)


def _pairwise_coarsen(increments, levels):
    for _ in range(levels):
        increments = increments[:, 0::2] + increments[:, 1::2]
    return increments


def _driver_increments(master_seed, tag, paths, grid, dim, refine_to, threads):
    fine_steps = grid.steps_N if refine_to is None else refine_to
    levels = int(np.log2(fine_steps // grid.steps_N))
    scale = np.sqrt(grid.horizon_T / fine_steps)

    def chunk(index):
        z = counter_normals(master_seed, tag, index, fine_steps, dim) * scale
        return _pairwise_coarsen(z, levels)

    n_workers = max(1, int(threads or 1))
    if n_workers == 1 or len(paths) < 2 * n_workers:
        return chunk(paths)
    pieces = np.array_split(paths, n_workers)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return np.concatenate(list(pool.map(chunk, pieces)), axis=0)


def _to_path(increments):
    out = np.zeros((increments.shape[0], increments.shape[1] + 1, increments.shape[2]))
    np.cumsum(increments, axis=1, out=out[:, 1:, :])
    out.setflags(write=False)
    return out


def sample_brownian(grid, paths_M, dim_d=1, dim_l=1, master_seed=0, *,
                    refine_to=None, threads=None, path_offset=0):
    """Sample ``paths_M`` independent copies of the pair ``(W, B)`` on ``grid``.

    Parameters
    ----------
    refine_to : int, optional
        Draw the increments on a grid with ``refine_to`` steps and sum them
        pairwise down to ``grid``. Bundles sampled with the same ``refine_to``
        and seed are coupled: a coarse increment equals, bit for bit, the sum
        of the two increments it splits into on the next finer grid.
    threads : int, optional
        Number of worker threads. Has no effect on the values.
    path_offset : int
        Index of the first path; lets callers generate disjoint slices.
    """
    paths_M = check_positive_int(paths_M, "paths_M")
    dim_d = check_positive_int(dim_d, "dim_d")
    dim_l = check_positive_int(dim_l, "dim_l")
    path_offset = check_nonnegative_int(path_offset, "path_offset")
    if refine_to is not None:
        refine_to = check_positive_int(refine_to, "refine_to")
        ratio = refine_to // grid.steps_N
        if refine_to % grid.steps_N or ratio & (ratio - 1):
            raise ConfigurationError(
                f"refine_to={refine_to} must be steps_N={grid.steps_N} times a power of two"
            )
    paths = np.arange(path_offset, path_offset + paths_M, dtype=np.uint64)
    try:
        dW = _driver_increments(master_seed, TAG_W, paths, grid, dim_d, refine_to, threads)
        dB = _driver_increments(master_seed, TAG_B, paths, grid, dim_l, refine_to, threads)
        bundle = BrownianBundle(grid, dW, dB, int(master_seed), refine_to)
    except MemoryError as exc:
        raise AllocationError(
            f"cannot allocate Brownian bundle with M={paths_M}, N={grid.steps_N}, "
            f"d={dim_d}, l={dim_l}"
        ) from exc
    return bundle
