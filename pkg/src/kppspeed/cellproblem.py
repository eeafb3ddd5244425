"""Cell problem ``chi'' = -b1`` and the small-amplitude speed asymptotics.

For a mean-zero shear ``b1`` the enhancement coefficient is
``k = (1/L) * int chi_y**2 dy`` and the minimal speed expands as
``c*(delta) = c0 + c0 delta**2 k / 2 + O(delta**3)`` with ``c0 = 2 sqrt(f'(0))``.
For the stationary O-U shear the ensemble average of ``k`` has a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import GridError, SolvabilityError
from .shear import Grid, OUParams


@dataclass(frozen=True)
class ChiField:
    grid: Grid
    chi: np.ndarray
    chi_deriv: np.ndarray
    k: float

    @property
    def grad_sup(self) -> float:
        """Max-norm of ``chi_y`` over the nodes."""
        return float(np.max(np.abs(self.chi_deriv)))


def _cumtrapz(v: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(v)
    out[0] = 0.0
    out[1:] = np.cumsum(0.5 * h * (v[1:] + v[:-1]))
    return out


def solve_cell_problem(b1, grid: Grid, rtol: float = 1e-10) -> ChiField:
    """Neumann solution of ``chi'' = -b1`` normalized so that ``min chi = 0``.

    ``chi_y`` is the cumulative trapezoid integral of ``-b1`` and ``chi`` a
    second cumulative trapezoid of ``chi_y``.
    """
    b1 = np.asarray(b1, dtype=float)
    if b1.shape != (grid.m,):
        raise GridError(f"source has shape {b1.shape}, grid has {grid.m} nodes")
    scale = float(np.max(np.abs(b1))) if b1.size else 0.0
    mean = grid.trapezoid_mean(b1)
    if abs(mean) > rtol * max(scale, np.finfo(float).tiny):
        raise SolvabilityError(f"source mean {mean:.3e} is not zero (max |b1| = {scale:.3e})")
    dchi = -_cumtrapz(b1, grid.h)
    # the end value is the full integral of b1, zero up to rounding
    dchi[-1] = 0.0
    chi = _cumtrapz(dchi, grid.h)
    chi -= chi.min()
    k = grid.trapezoid_mean(dchi**2)
    return ChiField(grid, chi, dchi, k)


def c0_speed(f_prime0: float, kappa: float = 1.0) -> float:
    """Unperturbed KPP speed ``2 sqrt(kappa f'(0))``."""
    return 2.0 * math.sqrt(kappa * f_prime0)


def predicted_speed_small_delta(k: float, delta: float, f_prime0: float,
                                kappa: float = 1.0) -> float:
    """``c0 + c0 delta**2 k / 2``; with diffusivity ``kappa`` the shear term is
    ``delta**2 k / kappa**2`` since ``c* ~ 2 sqrt(f'(0) (kappa + delta**2 k / kappa))``."""
    c0 = c0_speed(f_prime0, kappa)
    return c0 + c0 * delta**2 * k / (2.0 * kappa**2)


# Taylor coefficients of G(x) = a**2 F with x = a L, where F is the bracket in
# the closed form.  Terms below x**3 cancel exactly.
def _series_coeff(j: int) -> float:
    return (4.0 * (-1) ** j / math.factorial(j + 2)) - ((-1) ** j / (3.0 * math.factorial(j)))


_SERIES = [_series_coeff(j) for j in range(3, 24)]
_SERIES_CUTOFF = 0.1


def _bracket_scaled(x: float) -> float:
    """``G(x) = 4(e^-x - 1)/x^2 + 4/x - (e^-x + 5)/3 + x/3``."""
    if x < _SERIES_CUTOFF:
        return sum(c * x ** (j + 3) for j, c in enumerate(_SERIES))
    ex = math.exp(-x)
    return ex * (4.0 / x**2 - 1.0 / 3.0) + x / 3.0 - 4.0 / x**2 - 5.0 / 3.0 + 4.0 / x


def ou_enh_closed_form(a: float, r: float, L: float) -> float:
    """Ensemble average of ``k`` for the stationary O-U shear on ``[0, L]``::

        (r^2/2a) [e^{-aL}(4/(L^2 a^4) - 1/(3a^2)) + L/(3a) - 4/(L^2 a^4) - 5/(3a^2) + 4/(L a^3)]

    For small ``aL`` the bracket is a difference of large terms and is
    evaluated from its Taylor series instead.
    """
    rho = r**2 / (2.0 * a)
    return rho * _bracket_scaled(a * L) / a**2


def ou_enh_literal(a: float, r: float, L: float) -> float:
    """The closed form evaluated term by term, with no cancellation guard."""
    return (r**2 / (2 * a)) * (
        math.exp(-a * L) * (4 / (L**2 * a**4) - 1 / (3 * a**2))
        + L / (3 * a) - 4 / (L**2 * a**4) - 5 / (3 * a**2) + 4 / (L * a**3)
    )


def ou_enh_assembled(a: float, r: float, L: float) -> float:
    """Same quantity assembled from its intermediate averages by quadrature.

    ``E<chi_x^2> = (1/L) int_0^L [x^2 <g> - 2 x^2 <g>_x + D(x)] dx`` where
    ``<g>_x`` is the running average over ``[0, x]`` of the covariance averaged
    across the channel and ``D(x)`` the covariance double integral over
    ``[0, x]^2``.
    """
    rho = r**2 / (2.0 * a)

    def g_avg_x(x):
        return rho * (2 / (L * a) + (math.exp(-a * x) - 1) / (x * L * a**2)
                      + (math.exp(-a * L) - math.exp(-a * (L - x))) / (x * L * a**2))

    g_avg = rho * (2 / (L * a) + 2 / (L**2 * a**2) * (math.exp(-a * L) - 1))

    def double_int(x):
        return rho * (2 * x / a + 2 / a**2 * (math.exp(-a * x) - 1))

    def integrand(x):
        if x == 0.0:
            return 0.0
        return x**2 * g_avg - 2 * x**2 * g_avg_x(x) + double_int(x)

    val, _ = integrate.quad(integrand, 0.0, L, epsabs=0.0, epsrel=1e-13, limit=200)
    return val / L


def predicted_mean_speed(params: OUParams, delta: float, f_prime0: float,
                         kappa: float = 1.0) -> float:
    enh = ou_enh_closed_form(params.a, params.r, params.L)
    return predicted_speed_small_delta(enh, delta, f_prime0, kappa)


def discrete_mean_k(params: OUParams, grid: Grid) -> float:
    """Exact expectation of the discrete ``k`` for exact O-U nodal samples.

    ``k`` is a quadratic form in the nodal shear, so its mean is the trace of
    that form against the covariance matrix ``rho exp(-a |y_i - y_j|)``.  This
    isolates the quadrature bias of :func:`solve_cell_problem` from Monte Carlo
    noise.
    """
    m, h = grid.m, grid.h
    y = grid.nodes
    cov = params.rho * np.exp(-params.a * np.abs(y[:, None] - y[None, :]))
    w = np.full(m, h)
    w[0] = w[-1] = h / 2
    centre = np.eye(m) - np.outer(np.ones(m), w) / grid.L  # b -> b1
    cum = np.zeros((m, m))  # dchi = -cum @ b1
    for i in range(1, m):
        cum[i] = cum[i - 1]
        cum[i, i - 1] += h / 2
        cum[i, i] += h / 2
    T = cum @ centre
    T[-1] = 0.0
    wk = w / grid.L
    return float(np.einsum("i,ij,jk,ik->", wk, T, cov, T))
