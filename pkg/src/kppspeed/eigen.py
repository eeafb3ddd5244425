"""Principal eigenpair of the discretized cross-channel operator.

For a spectral parameter ``lam`` the operator is::

    kappa phi'' + (kappa lam**2 + lam delta b(y) + f'(0)) phi = mu phi,
    phi'(0) = phi'(L) = 0

discretized with second-order central differences at the nodes.  The Neumann
ends use ghost nodes (``phi_0 = phi_2``), which makes the first and last
off-diagonal entries ``2 kappa / h**2``.  Scaling the end components of the
eigenvector by ``1/sqrt(2)`` turns the matrix into a symmetric tridiagonal one
with end off-diagonals ``sqrt(2) kappa / h**2`` and the same spectrum.

The largest eigenvalue is bracketed between Rayleigh quotients (lower bounds)
and Sturm-sequence verified upper bounds, starting from the Gershgorin bound.
Each sweep applies inverse iteration shifted at the current upper bound and
either tightens the bracket through the residual bound or bisects it.  The
shift never drops below the largest eigenvalue, so ``sigma I - A`` stays a
nonsingular M-matrix and the eigenvector iterates remain entrywise positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ParameterError, SolverError
from .shear import Grid, ShearPath

_EPS = np.finfo(float).eps
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class TridiagonalOperator:
    """Symmetrized discretization; only one off-diagonal is stored."""

    diag: np.ndarray
    offdiag: np.ndarray
    grid: Grid
    lam: float
    delta: float
    f_prime0: float
    kappa: float = 1.0

    @property
    def norm_bound(self) -> float:
        e = np.abs(self.offdiag)
        return float(np.max(np.abs(self.diag)) + 2.0 * np.max(e))

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        y = self.diag * x
        y[:-1] += self.offdiag * x[1:]
        y[1:] += self.offdiag * x[:-1]
        return y

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)


@dataclass(frozen=True)
class EigenResult:
    mu: float
    phi: np.ndarray  # nodal eigenfunction, max entry 1
    residual: float
    iterations: int = 0

    @property
    def weights(self) -> np.ndarray:
        """Normalized ``psi_i**2`` of the symmetric eigenvector (trapezoid-weighted ``phi**2``)."""
        w = self.phi**2
        w[0] *= 0.5
        w[-1] *= 0.5
        return w / w.sum()


def assemble_operator(shear: ShearPath, lam: float, delta: float, f_prime0: float,
                      kappa: float = 1.0) -> TridiagonalOperator:
    if not lam > 0:
        raise ParameterError(f"spectral parameter must be positive, got {lam}")
    if not kappa > 0:
        raise ParameterError(f"diffusivity must be positive, got {kappa}")
    grid = shear.grid
    h2 = grid.h**2
    diag = kappa * lam**2 + lam * delta * shear.values + f_prime0 - 2.0 * kappa / h2
    off = np.full(grid.m - 1, kappa / h2)
    off[0] *= SQRT2
    off[-1] *= SQRT2
    return TridiagonalOperator(diag, off, grid, float(lam), float(delta), float(f_prime0), float(kappa))


@numba.njit(cache=True)
def _count_above(d, e2, sigma):
    """Number of eigenvalues strictly greater than ``sigma`` (Sturm count)."""
    m = d.shape[0]
    below = 0
    q = d[0] - sigma
    if q == 0.0:
        q = -1e-300
    if q < 0.0:
        below += 1
    for i in range(1, m):
        q = d[i] - sigma - e2[i - 1] / q
        if q == 0.0:
            q = -1e-300
        if q < 0.0:
            below += 1
    return m - below


@numba.njit(cache=True)
def _solve_shifted(d, e, sigma, rhs, out):
    """Solve ``(sigma I - A) x = rhs`` by the Thomas algorithm."""
    m = d.shape[0]
    cp = np.empty(m)
    p = sigma - d[0]
    cp[0] = -e[0] / p if m > 1 else 0.0
    out[0] = rhs[0] / p
    for i in range(1, m):
        p = sigma - d[i] + e[i - 1] * cp[i - 1]
        if i < m - 1:
            cp[i] = -e[i] / p
        out[i] = (rhs[i] + e[i - 1] * out[i - 1]) / p
    for i in range(m - 2, -1, -1):
        out[i] = out[i] - cp[i] * out[i + 1]


@numba.njit(cache=True)
def _rayleigh(d, e, x):
    """Rayleigh quotient and 2-norm residual of ``x`` (any scaling)."""
    m = d.shape[0]
    num = 0.0
    den = 0.0
    for i in range(m):
        ax = d[i] * x[i]
        if i > 0:
            ax += e[i - 1] * x[i - 1]
        if i < m - 1:
            ax += e[i] * x[i + 1]
        num += x[i] * ax
        den += x[i] * x[i]
    rho = num / den
    res = 0.0
    for i in range(m):
        ax = d[i] * x[i]
        if i > 0:
            ax += e[i - 1] * x[i - 1]
        if i < m - 1:
            ax += e[i] * x[i + 1]
        res += (ax - rho * x[i]) ** 2
    return rho, math.sqrt(res / den)


@numba.njit(cache=True)
def _largest_eigenpair(d, e, x0, max_iter):
    m = d.shape[0]
    e2 = e * e
    # Gershgorin upper bound
    hi = d[0] + abs(e[0])
    for i in range(1, m - 1):
        v = d[i] + abs(e[i - 1]) + abs(e[i])
        if v > hi:
            hi = v
    v = d[m - 1] + abs(e[m - 2])
    if v > hi:
        hi = v
    scale = 0.0
    for i in range(m):
        if abs(d[i]) > scale:
            scale = abs(d[i])
    for i in range(m - 1):
        if 2.0 * abs(e[i]) > scale:
            scale = 2.0 * abs(e[i])
    tol = 4.0 * 2.220446049250313e-16 * scale
    hi += tol
    # Bracket [lo, hi] on the largest eigenvalue.  lo grows through Rayleigh
    # quotients; hi shrinks through Sturm-verified residual bounds or bisection.
    x = x0.copy()
    y = np.empty(m)
    lo, res = _rayleigh(d, e, x)
    cand = lo + res + tol
    if cand < hi and _count_above(d, e2, cand) == 0:
        hi = cand
    it = 0
    while hi - lo > tol and it < max_iter:
        it += 1
        _solve_shifted(d, e, hi + tol, x, y)
        nrm = 0.0
        for i in range(m):
            if abs(y[i]) > nrm:
                nrm = abs(y[i])
        for i in range(m):
            x[i] = y[i] / nrm
        rho, res = _rayleigh(d, e, x)
        if rho > lo:
            lo = rho
        cand = lo + res + tol
        if cand < hi and _count_above(d, e2, cand) == 0:
            hi = cand
        else:
            mid = 0.5 * (lo + hi)
            if _count_above(d, e2, mid) >= 1:
                lo = mid
            else:
                hi = mid
    # one more solve so the vector matches the final shift
    _solve_shifted(d, e, hi + tol, x, y)
    nrm = 0.0
    for i in range(m):
        if abs(y[i]) > nrm:
            nrm = abs(y[i])
    for i in range(m):
        x[i] = y[i] / nrm
    rho, res = _rayleigh(d, e, x)
    return max(rho, lo), x, hi + tol, it, hi - lo <= tol


@numba.njit(cache=True)
def _assemble(values, lam, delta, f0, kappa, h):
    m = values.shape[0]
    h2 = h * h
    d = np.empty(m)
    for i in range(m):
        d[i] = kappa * lam * lam + lam * delta * values[i] + f0 - 2.0 * kappa / h2
    e = np.full(m - 1, kappa / h2)
    e[0] *= math.sqrt(2.0)
    e[m - 2] *= math.sqrt(2.0)
    return d, e


@numba.njit(cache=True)
def _speed_terms(values, lam, delta, f0, kappa, h, x0):
    """``mu``, ``dmu/dlam``, ``d2mu/dlam2`` and the symmetric eigenvector.

    First derivative by Hellmann-Feynman, second from the reduced resolvent:
    ``mu'' = 2 kappa + 2 g^T (mu - A)^+ g`` with ``g = (A' - mu') psi``.
    """
    d, e = _assemble(values, lam, delta, f0, kappa, h)
    m = d.shape[0]
    mu, x, sigma, it, ok = _largest_eigenpair(d, e, x0, 200)
    nrm2 = 0.0
    for i in range(m):
        nrm2 += x[i] * x[i]
    psi = x / math.sqrt(nrm2)
    dmu = 0.0
    for i in range(m):
        dmu += psi[i] * psi[i] * (2.0 * kappa * lam + delta * values[i])
    g = np.empty(m)
    for i in range(m):
        g[i] = (2.0 * kappa * lam + delta * values[i] - dmu) * psi[i]
    # remove the (rounding-level) component along psi before the near-singular solve
    c = 0.0
    for i in range(m):
        c += g[i] * psi[i]
    for i in range(m):
        g[i] -= c * psi[i]
    z = np.empty(m)
    _solve_shifted(d, e, sigma, g, z)
    c = 0.0
    for i in range(m):
        c += z[i] * psi[i]
    quad = 0.0
    for i in range(m):
        quad += g[i] * (z[i] - c * psi[i])
    d2mu = 2.0 * kappa + 2.0 * quad
    return mu, dmu, d2mu, x, it, ok


def _to_nodal(psi: np.ndarray) -> np.ndarray:
    phi = psi.copy()
    phi[0] *= SQRT2
    phi[-1] *= SQRT2
    return phi / np.max(np.abs(phi))


def principal_eigenpair(op: TridiagonalOperator, method: str = "bisection") -> EigenResult:
    """Largest eigenvalue and its positive eigenfunction.

    ``method="lapack"`` uses ``scipy.linalg.eigh_tridiagonal`` instead of the
    built-in bisection; it is slower and serves as a cross-check.
    """
    d = np.ascontiguousarray(op.diag, dtype=float)
    e = np.ascontiguousarray(op.offdiag, dtype=float)
    iterations = 0
    if method == "bisection":
        x0 = np.ones(d.shape[0])
        x0[0] = x0[-1] = 1.0 / SQRT2
        mu, psi, _, iterations, ok = _largest_eigenpair(d, e, x0, 200)
        if not ok:
            raise SolverError("bisection did not converge", {"iterations": iterations, "mu": mu})
    elif method == "lapack":
        from scipy.linalg import eigh_tridiagonal

        m = d.shape[0]
        w, v = eigh_tridiagonal(d, e, select="i", select_range=(m - 1, m - 1))
        mu, psi = float(w[0]), v[:, 0]
        if psi.sum() < 0:
            psi = -psi
    else:
        raise ParameterError(f"unknown eigen method {method!r}")
    if not (np.isfinite(mu) and np.all(np.isfinite(psi))):
        raise SolverError("non-finite eigenpair", {"mu": mu, "iterations": iterations})
    scale = np.max(np.abs(psi))
    r = op.matvec(psi / scale) - mu * psi / scale
    residual = float(np.max(np.abs(r)))
    # Rounding in A @ psi alone is of order eps * ||A||; the bound admits it on fine grids.
    limit = max(1e-10 * (abs(mu) + 1.0), 64 * _EPS * op.norm_bound)
    if residual > limit:
        raise SolverError("eigen residual too large",
                          {"residual": residual, "limit": limit, "mu": mu, "iterations": iterations})
    return EigenResult(float(mu), _to_nodal(psi), residual, int(iterations))


def principal_eigenvalue(shear: ShearPath, lam: float, delta: float, f_prime0: float,
                         kappa: float = 1.0) -> float:
    return principal_eigenpair(assemble_operator(shear, lam, delta, f_prime0, kappa)).mu
