"""Random shear profiles across the channel.

The shear is a stationary Ornstein-Uhlenbeck (O-U) process in the cross-channel
coordinate ``y``::

    dX = -a X dy + r dW,    X(0) ~ Normal(0, rho),    rho = r**2 / (2 a)

with covariance ``rho * exp(-a |t|)``.  Realizations are produced on a fine
grid of spacing ``hbar <= h**2`` and subsampled at the nodes of the
eigenvalue grid.  Because the noise is additive, the Milstein correction term
vanishes identically and the Milstein step coincides with Euler-Maruyama.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import GridError, ParameterError


@dataclass(frozen=True)
class OUParams:
    """Parameters of the stationary O-U shear on ``[0, L]``.

    ``rho`` is derived; passing it explicitly is allowed but it must agree
    with ``r**2 / (2 a)``.
    """

    a: float
    r: float
    L: float
    rho: float | None = None

    def __post_init__(self):
        if not (self.a > 0 and np.isfinite(self.a)):
            raise ParameterError(f"drift rate a must be positive, got {self.a}")
        # r == 0 is the degenerate deterministic process, kept for testing.
        if not (self.r >= 0 and np.isfinite(self.r)):
            raise ParameterError(f"noise intensity r must be non-negative, got {self.r}")
        if not (self.L > 0 and np.isfinite(self.L)):
            raise ParameterError(f"channel width L must be positive, got {self.L}")
        rho = self.r**2 / (2.0 * self.a)
        if self.rho is None:
            object.__setattr__(self, "rho", rho)
        elif not math.isclose(self.rho, rho, rel_tol=1e-12, abs_tol=0.0):
            raise ParameterError(f"rho={self.rho} inconsistent with r^2/(2a)={rho}")

    @classmethod
    def from_variance(cls, a: float, rho: float, L: float) -> "OUParams":
        """Build from drift rate and stationary variance."""
        return cls(a=a, r=math.sqrt(2.0 * a * rho), L=L)

    @classmethod
    def energy_normalized(cls, alpha: float, L: float) -> "OUParams":
        """Covariance ``sqrt(alpha) exp(-alpha |t|)``, i.e. ``r = sqrt(2) alpha**(3/4)``.

        The L2 norm of the covariance function is independent of ``alpha``.
        """
        return cls(a=alpha, r=math.sqrt(2.0) * alpha**0.75, L=L)


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``y_i = i h``, ``i = 0..m-1``, ``h = L/(m-1)``."""

    L: float
    m: int

    def __post_init__(self):
        if not (self.L > 0 and np.isfinite(self.L)):
            raise GridError(f"grid length must be positive, got {self.L}")
        if int(self.m) != self.m or self.m < 3:
            raise GridError(f"grid needs at least 3 nodes, got m={self.m}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def h(self) -> float:
        return self.L / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        y = np.arange(self.m) * self.h
        y[-1] = self.L
        return y

    def trapezoid_mean(self, values) -> float:
        """Composite trapezoid rule average over ``[0, L]``."""
        v = np.asarray(values, dtype=float)
        if v.shape != (self.m,):
            raise GridError(f"expected {self.m} nodal values, got shape {v.shape}")
        total = v[1:-1].sum() + 0.5 * (v[0] + v[-1])
        return float(total / (self.m - 1))


def trapezoid_weights(m: int) -> np.ndarray:
    """Normalized composite trapezoid weights (sum to 1)."""
    w = np.ones(m)
    w[0] = w[-1] = 0.5
    return w / (m - 1)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ShearPath:
    """One realization ``b(y_i)`` with its trapezoid mean and fluctuation."""

    grid: Grid
    values: np.ndarray
    mean: float = field(init=False)
    fluctuation: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.m,):
            raise GridError(f"shear has shape {v.shape}, grid has {self.grid.m} nodes")
        if not np.all(np.isfinite(v)):
            raise ParameterError("shear values must be finite")
        mean = self.grid.trapezoid_mean(v)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "fluctuation", _frozen(v - mean))

    @classmethod
    def from_function(cls, grid: Grid, func) -> "ShearPath":
        return cls(grid, func(grid.nodes))

    @classmethod
    def constant(cls, grid: Grid, value: float = 0.0) -> "ShearPath":
        return cls(grid, np.full(grid.m, float(value)))

    def mean_free(self) -> "ShearPath":
        """The fluctuation part as a path of its own."""
        return ShearPath(self.grid, self.fluctuation)

    def scaled(self, s: float) -> "ShearPath":
        return ShearPath(self.grid, s * self.values)

    def to_csv(self, path) -> None:
        write_path_csv(self, path)


def fine_substeps(h: float) -> int:
    """Number of fine steps per grid cell so that ``hbar = h / n <= h**2``."""
    # 1e-9 guards against 1/h landing a hair above an integer.
    return max(1, math.ceil(1.0 / h - 1e-9))


def realization_stream(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for realization ``index`` under ``master_seed``.

    The stream depends only on ``(master_seed, index)``, never on which worker
    draws it.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def _check(params: OUParams, grid: Grid):
    if not math.isclose(params.L, grid.L, rel_tol=1e-12):
        raise GridError(f"O-U width L={params.L} differs from grid length {grid.L}")


def sample_ou_path(params: OUParams, grid: Grid, stream: np.random.Generator) -> ShearPath:
    """Milstein (= Euler-Maruyama) path on the fine grid, subsampled at grid nodes.

    The fine spacing is ``hbar = h / ceil(1/h)``.
    """
    _check(params, grid)
    n = fine_substeps(grid.h)
    hbar = grid.h / n
    steps = n * (grid.m - 1)
    x0 = math.sqrt(params.rho) * stream.standard_normal()
    forcing = np.empty(steps + 1)
    forcing[0] = x0
    forcing[1:] = params.r * math.sqrt(hbar) * stream.standard_normal(steps)
    # X_{k+1} = (1 - a hbar) X_k + r sqrt(hbar) Z_k as a first-order recursive filter
    fine = lfilter([1.0], [1.0, -(1.0 - params.a * hbar)], forcing)
    return ShearPath(grid, fine[::n])


def exact_ou_sample(params: OUParams, grid: Grid, stream: np.random.Generator) -> ShearPath:
    """Sample the O-U process at the grid nodes from its exact Gaussian transition."""
    _check(params, grid)
    decay = math.exp(-params.a * grid.h)
    innov = math.sqrt(params.rho * (1.0 - decay**2))
    forcing = np.empty(grid.m)
    forcing[0] = math.sqrt(params.rho) * stream.standard_normal()
    forcing[1:] = innov * stream.standard_normal(grid.m - 1)
    return ShearPath(grid, lfilter([1.0], [1.0, -decay], forcing))


def ou_covariance(params: OUParams, t) -> float | np.ndarray:
    """``rho * exp(-a |t|)``."""
    out = params.rho * np.exp(-params.a * np.abs(t))
    return float(out) if np.ndim(out) == 0 else out


def estimate_covariance(paths: Sequence[ShearPath], lags: Iterable[float]):
    """Empirical covariance ``E[b(y) b(y + t)]`` at lags that are multiples of ``h``.

    Returns a list of ``(lag, estimate, standard_error)``.  Within a path the
    product is averaged over all valid node pairs; the standard error comes
    from the spread of the per-path averages, which are independent.
    """
    paths = list(paths)
    if len(paths) < 2:
        raise GridError("need at least two paths to estimate a covariance")
    grid = paths[0].grid
    if any(p.grid != grid for p in paths):
        raise GridError("all paths must share the same grid")
    data = np.stack([p.values for p in paths])
    out = []
    for t in lags:
        j = int(round(float(t) / grid.h))
        if j < 0 or j >= grid.m or not math.isclose(j * grid.h, float(t), rel_tol=1e-9, abs_tol=1e-12):
            raise GridError(f"lag {t} is not a grid multiple within [0, L]")
        per_path = np.mean(data[:, : grid.m - j] * data[:, j:], axis=1)
        se = per_path.std(ddof=1) / math.sqrt(len(paths))
        out.append((j * grid.h, float(per_path.mean()), float(se)))
    return out


def write_path_csv(path: ShearPath, file) -> None:
    with open(file, "w") as fh:
        fh.write("y,b\n")
        for y, b in zip(path.grid.nodes, path.values):
            fh.write(f"{y:.17g},{b:.17g}\n")
