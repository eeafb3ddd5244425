"""Direct simulation of fronts in a sheared channel.

Solves

    u_t + kappa delta b(y) u_x = kappa (u_xx + u_yy) + f(u)

on ``[x_lo, x_lo + W] x [0, L]`` with ``u = 1`` behind (left) and ``u = 0``
ahead (right) of a front moving toward ``+x``, Neumann in ``y``.  The shear
term carries the factor ``kappa`` so that the front speed is compared with
``c*`` of the eigenvalue problem with diffusivity ``kappa`` and amplitude
``kappa delta``; with this scaling the small-amplitude enhancement is
``M / c0 ~ delta**2 k / 2`` for every ``kappa``.

Advection uses a flux-limited (van Leer) second-order upwind difference,
diffusion the five-point Laplacian and the reaction is explicit.  Under the
time step bound every update is a convex combination, so ``0 <= u <= 1``
holds for all three nonlinearities.  The window follows the front by whole
cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .errors import ParameterError, SimulationError
from .shear import ShearPath

KINDS = ("kpp", "combustion", "bistable")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
SAFETY = 0.9


@dataclass(frozen=True)
class Nonlinearity:
    """``kpp``: ``u(1-u)``; ``combustion``: ``(u-theta)(1-u)`` above ``theta``;
    ``bistable``: ``u(1-u)(u-mu)``.  ``param`` is ``theta`` or ``mu``."""

    kind: str = "kpp"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown nonlinearity {self.kind!r}")
        if self.kind == "combustion" and not 0.0 < self.param < 1.0:
            raise ParameterError(f"ignition threshold must lie in (0, 1), got {self.param}")
        if self.kind == "bistable" and not 0.0 < self.param < 0.5:
            raise ParameterError(f"bistable zero must lie in (0, 1/2), got {self.param}")

    @classmethod
    def kpp(cls):
        return cls("kpp")

    @classmethod
    def combustion(cls, theta: float = 0.3):
        return cls("combustion", theta)

    @classmethod
    def bistable(cls, mu: float = 0.25):
        return cls("bistable", mu)

    @property
    def f_prime0(self) -> float:
        return {"kpp": 1.0, "combustion": 0.0, "bistable": -self.param}[self.kind]

    @property
    def lipschitz(self) -> float:
        """Bound on ``|f'|`` over ``[0, 1]``."""
        if self.kind == "kpp":
            return 1.0
        if self.kind == "combustion":
            return 1.0 - self.param
        return 1.0 + self.param

    def __call__(self, u):
        return evaluate_nonlinearity(self, u)


@numba.njit(cache=True)
def _react(code, p, u):
    if code == 0:
        return u * (1.0 - u)
    if code == 1:
        return (u - p) * (1.0 - u) if u > p else 0.0
    return u * (1.0 - u) * (u - p)


def evaluate_nonlinearity(nl: Nonlinearity, u):
    code, p = _KIND_CODE[nl.kind], float(nl.param)
    if np.ndim(u) == 0:
        return _react(code, p, float(u))
    u = np.asarray(u, dtype=float)
    return np.array([_react(code, p, float(v)) for v in u.ravel()]).reshape(u.shape)


@dataclass
class FrontState:
    u: np.ndarray  # (ny, nx), rows are y nodes
    x_lo: float
    t: float
    dx: float
    dy: float
    kappa: float
    delta: float
    b: np.ndarray  # shear at the y nodes

    @property
    def x(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(self.u.shape[1])

    def copy(self) -> "FrontState":
        return FrontState(self.u.copy(), self.x_lo, self.t, self.dx, self.dy, self.kappa,
                          self.delta, self.b.copy())


@dataclass
class FrontTrajectory:
    t: np.ndarray
    x_f: np.ndarray
    speed: float
    residual: float  # rms deviation from the fitted line over the fit window
    fit_start: float
    info: dict = field(default_factory=dict)

    def speed_over(self, fraction: float) -> float:
        """Least-squares slope over the final ``fraction`` of the run."""
        return _fit_tail(self.t, self.x_f, fraction)[0]

    def to_csv(self, file) -> None:
        with open(file, "w") as fh:
            fh.write("t,x_f\n")
            for t, x in zip(self.t, self.x_f):
                fh.write(f"{t:.17g},{x:.17g}\n")

    def write_manifest(self, file) -> None:
        data = dict(self.info, speed=self.speed, residual=self.residual, fit_start=self.fit_start)
        with open(file, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)


@dataclass(frozen=True)
class SimulationParams:
    kappa: float = 0.025
    dx: float = 0.05
    dt: float = 0.004
    t_final: float = 100.0
    window: float = 12.0  # x extent of the computational window
    lead: float = 8.0  # target distance kept ahead of the front
    x0: float = 2.0  # initial front position inside the window
    width0: float = 0.1  # initial tanh step width
    record_every: int = 25
    fit_fraction: float = 0.5
    max_residual: float = 0.25  # allowed rms misfit of x_f(t), in cells

    def to_dict(self) -> dict:
        return asdict(self)


def cfl_numbers(state: FrontState, nl: Nonlinearity, dt: float):
    """``(diffusion, advection, reaction)`` ratios to their stability limits."""
    diff = dt * 4.0 * state.kappa / min(state.dx, state.dy) ** 2
    vmax = state.kappa * abs(state.delta) * float(np.max(np.abs(state.b)))
    adv = dt * vmax / state.dx
    return diff, adv, dt * nl.lipschitz


def _check_cfl(state: FrontState, nl: Nonlinearity, dt: float):
    diff, adv, react = cfl_numbers(state, nl, dt)
    # Forward Euler with limited upwinding is a convex combination when
    # 2 * adv + diff + react <= 1; the individual bounds below imply it.
    if not (dt > 0 and diff <= SAFETY and adv <= SAFETY and 2 * adv + diff + react <= 1.0):
        raise SimulationError(f"time step {dt} violates the stability bound "
                              f"(diffusion {diff:.3g}, advection {adv:.3g}, reaction {react:.3g})")


@numba.njit(cache=True)
def _limiter(r):
    # van Leer
    return (r + abs(r)) / (1.0 + abs(r))


@numba.njit(cache=True)
def _advance(u, out, vel, kappa, dx, dy, dt, code, p, nsteps):
    """``nsteps`` explicit steps; ``u`` and ``out`` are swapped internally.

    Returns the array holding the final state (either ``u`` or ``out``).
    Boundary values: ``u = 1`` left of the window, ``u = 0`` right of it,
    mirror images across ``y = 0`` and ``y = L``.
    """
    ny, nx = u.shape
    cx = kappa * dt / (dx * dx)
    cy = kappa * dt / (dy * dy)
    a = u
    c = out
    for _ in range(nsteps):
        for i in range(ny):
            iu = i - 1 if i > 0 else 1
            idn = i + 1 if i < ny - 1 else ny - 2
            v = vel[i]
            nu = v * dt / dx
            for j in range(nx):
                um2 = a[i, j - 2] if j >= 2 else 1.0
                um1 = a[i, j - 1] if j >= 1 else 1.0
                u0 = a[i, j]
                up1 = a[i, j + 1] if j < nx - 1 else 0.0
                up2 = a[i, j + 2] if j < nx - 2 else 0.0
                # limited upwind face values at j -/+ 1/2
                if v >= 0.0:
                    d1 = u0 - um1
                    d0 = um1 - um2
                    fl = um1 + 0.5 * (_limiter(d0 / d1) * d1 if d1 != 0.0 else 0.0)
                    d1 = up1 - u0
                    d0 = u0 - um1
                    fr = u0 + 0.5 * (_limiter(d0 / d1) * d1 if d1 != 0.0 else 0.0)
                else:
                    d1 = um1 - u0
                    d0 = u0 - up1
                    fl = u0 + 0.5 * (_limiter(d0 / d1) * d1 if d1 != 0.0 else 0.0)
                    d1 = u0 - up1
                    d0 = up1 - up2
                    fr = up1 + 0.5 * (_limiter(d0 / d1) * d1 if d1 != 0.0 else 0.0)
                adv = nu * (fr - fl)
                lap = cx * (up1 - 2.0 * u0 + um1) + cy * (a[iu, j] - 2.0 * u0 + a[idn, j])
                c[i, j] = u0 - adv + lap + dt * _react(code, p, u0)
        tmp = a
        a = c
        c = tmp
    return a


def step(state: FrontState, nl: Nonlinearity, dt: float, nsteps: int = 1) -> FrontState:
    """Advance ``nsteps`` explicit steps of size ``dt``; returns a new state."""
    _check_cfl(state, nl, dt)
    vel = state.kappa * state.delta * np.ascontiguousarray(state.b, dtype=float)
    u = np.ascontiguousarray(state.u, dtype=float).copy()
    out = np.empty_like(u)
    res = _advance(u, out, vel, state.kappa, state.dx, state.dy, dt,
                   _KIND_CODE[nl.kind], float(nl.param), int(nsteps))
    return FrontState(res, state.x_lo, state.t + nsteps * dt, state.dx, state.dy,
                      state.kappa, state.delta, state.b)


def _y_weights(ny: int) -> np.ndarray:
    w = np.ones(ny)
    w[0] = w[-1] = 0.5
    return w / w.sum()


def front_position(state: FrontState) -> float:
    """Largest ``x`` where the ``y``-averaged profile crosses 1/2 (linear interpolation)."""
    ubar = _y_weights(state.u.shape[0]) @ state.u
    above = np.flatnonzero(ubar >= 0.5)
    if above.size == 0 or above[-1] == ubar.size - 1:
        raise SimulationError("front lost: no 1/2 crossing inside the window")
    j = int(above[-1])
    u0, u1 = ubar[j], ubar[j + 1]
    return float(state.x_lo + state.dx * (j + (u0 - 0.5) / (u0 - u1)))


def initial_state(shear: ShearPath, delta: float, params: SimulationParams) -> FrontState:
    dy = shear.grid.h
    nx = int(round(params.window / params.dx))
    x = params.dx * np.arange(nx)
    profile = 0.5 * (1.0 - np.tanh((x - params.x0) / params.width0))
    u = np.tile(profile, (shear.grid.m, 1))
    return FrontState(u, 0.0, 0.0, params.dx, dy, params.kappa, float(delta),
                      np.array(shear.values, dtype=float))


def _shift(state: FrontState, cells: int) -> None:
    if cells <= 0:
        return
    state.u[:, :-cells] = state.u[:, cells:].copy()
    state.u[:, -cells:] = 0.0
    state.x_lo += cells * state.dx


def _fit_tail(t, x, fraction):
    n = len(t)
    start = min(int(math.floor((1.0 - fraction) * n)), n - 2)
    tt, xx = t[start:], x[start:]
    A = np.column_stack([tt, np.ones_like(tt)])
    (c, x0), *_ = np.linalg.lstsq(A, xx, rcond=None)
    resid = xx - (c * tt + x0)
    return float(c), float(np.sqrt(np.mean(resid**2))), float(tt[0])


def simulate_front(shear: ShearPath, delta: float, nl: Nonlinearity,
                   params: SimulationParams | None = None, seed=None,
                   comoving: bool = True) -> FrontTrajectory:
    """Evolve a smoothed step until ``t_final`` and fit the front speed.

    The speed is the least-squares slope of ``x_f(t)`` over the final
    ``params.fit_fraction`` of the run.  With ``comoving`` the fluctuation
    ``b - bbar`` is simulated in the frame moving at ``kappa delta bbar`` and
    positions are mapped back, which is exact for the PDE but not for the
    upwind discretization of a uniform drift.  ``seed`` is only recorded.
    """
    params = params or SimulationParams()
    drift = params.kappa * delta * shear.mean if comoving else 0.0
    if comoving:
        shear = shear.mean_free()
    state = initial_state(shear, delta, params)
    _check_cfl(state, nl, params.dt)
    nrec = int(round(params.t_final / (params.dt * params.record_every)))
    if nrec < 4:
        raise ParameterError("t_final too short for the recording interval")
    ts = np.empty(nrec + 1)
    xs = np.empty(nrec + 1)
    ts[0], xs[0] = 0.0, front_position(state)
    vel = params.kappa * delta * state.b
    out = np.empty_like(state.u)
    code, p = _KIND_CODE[nl.kind], float(nl.param)
    lo = params.window - params.lead
    shifts = 0
    for n in range(1, nrec + 1):
        res = _advance(state.u, out, vel, params.kappa, params.dx, state.dy, params.dt,
                       code, p, params.record_every)
        if res is out:
            state.u, out = out, state.u
        state.t = n * params.record_every * params.dt
        xf = front_position(state)
        if xf - state.x_lo > lo:
            cells = int((xf - state.x_lo - params.x0) / params.dx)
            _shift(state, cells)
            shifts += 1
        ts[n], xs[n] = state.t, xf
    umin, umax = float(state.u.min()), float(state.u.max())
    if umin < -1e-12 or umax > 1.0 + 1e-8:
        raise SimulationError(f"solution left [0, 1]: min {umin:.3e}, max {umax:.3e}")
    xs += drift * ts
    speed, resid, t0 = _fit_tail(ts, xs, params.fit_fraction)
    diff, adv, react = cfl_numbers(state, nl, params.dt)
    info = {"params": params.to_dict(), "nonlinearity": asdict(nl), "delta": float(delta),
            "seed": seed, "comoving": comoving, "frame_drift": drift,
            "cfl_diffusion": diff, "cfl_advection": adv, "cfl_reaction": react,
            "window_shifts": shifts, "u_min": umin, "u_max": umax}
    if not math.isfinite(speed) or resid > params.max_residual * params.dx:
        raise SimulationError(f"front speed did not settle (rms misfit {resid:.3e})")
    return FrontTrajectory(ts, xs, speed, resid, t0, info)


@dataclass
class DirectEnsemble:
    """Front speeds from direct simulation over shared shear realizations."""

    nonlinearity: Nonlinearity
    deltas: np.ndarray
    c0: float  # measured speed of the unsheared reference run
    b_bar: np.ndarray  # (N,)
    speeds: np.ndarray  # (N, D)
    kappa: float

    @property
    def M(self) -> np.ndarray:
        """``c - c0 - kappa delta bbar`` per realization and amplitude."""
        return self.speeds - self.c0 - self.kappa * self.deltas[None, :] * self.b_bar[:, None]

    @property
    def normalized(self) -> np.ndarray:
        return self.M / self.c0

    def fit(self):
        from .ensemble import fit_scaling_exponent

        return fit_scaling_exponent(list(zip(self.deltas, self.M.mean(axis=0))))


def direct_grid(L: float, dx: float):
    """Cross-channel grid with ``dy`` equal (or closest) to ``dx``."""
    from .shear import Grid

    return Grid(L, max(3, int(round(L / dx)) + 1))


def run_direct_ensemble(ou, deltas, nl: Nonlinearity, N: int, master_seed: int,
                        params: SimulationParams | None = None) -> DirectEnsemble:
    """Simulate ``N`` realizations at each amplitude plus one unsheared reference.

    Realization ``i`` uses the stream ``(master_seed, i)``, so two ensembles
    with the same seed share their shears.
    """
    from .shear import realization_stream, sample_ou_path

    params = params or SimulationParams()
    deltas = np.asarray(deltas, dtype=float)
    grid = direct_grid(ou.L, params.dx)
    c0 = simulate_front(ShearPath.constant(grid), 0.0, nl, params).speed
    b_bar = np.empty(N)
    speeds = np.empty((N, deltas.size))
    for i in range(N):
        path = sample_ou_path(ou, grid, realization_stream(master_seed, i))
        b_bar[i] = path.mean
        for j, d in enumerate(deltas):
            speeds[i, j] = simulate_front(path, d, nl, params, seed=(master_seed, i)).speed
    return DirectEnsemble(nl, deltas, c0, b_bar, speeds, params.kappa)
