"""Minimal KPP speed ``c* = inf_{0 < lam <= lam0} mu(lam) / lam`` for one shear.

The search interval is ``[1e-4 lam0, lam0]`` with ``lam0 = sqrt(f'(0)/kappa)``;
the infimum over all ``lam > 0`` is attained inside it.  ``H = mu/lam`` is
quasiconvex (its sublevel sets ``{mu(lam) - c lam <= 0}`` are intervals since
``mu`` is convex), so a monotone descent method cannot be trapped.

Sign convention: a constant shear ``b = c`` shifts ``mu`` by ``lam delta c``
and therefore ``c*`` by ``+delta c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import eigen
from .errors import ParameterError, SolverError
from .shear import ShearPath

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SolverOptions:
    grad_tol: float = 1e-10
    max_iters: int = 50
    golden_tol: float = 1e-10
    step_tol: float = 1e-8
    lambda_min_ratio: float = 1e-4
    trace: bool = False


@dataclass(frozen=True)
class SpeedResult:
    c_star: float
    lambda_star: float
    mu_star: float
    iterations: int
    converged: bool
    fallback_used: bool
    trace: list = field(default_factory=list, repr=False)


class _Objective:
    """Caches the last eigenvector to warm-start the next solve."""

    def __init__(self, shear: ShearPath, delta: float, f_prime0: float, kappa: float):
        self.values = np.ascontiguousarray(shear.values, dtype=float)
        self.h = shear.grid.h
        self.delta = float(delta)
        self.f0 = float(f_prime0)
        self.kappa = float(kappa)
        m = shear.grid.m
        # absolute rounding level of the computed eigenvalue
        vmax = float(np.max(np.abs(self.values))) if m else 0.0
        self._eps_base = 8 * np.finfo(float).eps * (4 * self.kappa / self.h**2 + abs(self.f0))
        self._eps_slope = 8 * np.finfo(float).eps * abs(self.delta) * vmax
        self.x = np.ones(m)
        self.x[0] = self.x[-1] = 1.0 / math.sqrt(2.0)
        self.evaluations = 0

    def terms(self, lam: float):
        mu, dmu, d2mu, x, it, ok = eigen._speed_terms(
            self.values, lam, self.delta, self.f0, self.kappa, self.h, self.x)
        self.evaluations += 1
        if not ok or not math.isfinite(mu):
            raise SolverError("principal eigenvalue did not converge",
                              {"lambda": lam, "iterations": it, "mu": mu})
        self.x = x
        H = mu / lam
        H1 = (dmu * lam - mu) / lam**2
        H2 = d2mu / lam - 2.0 * dmu / lam**2 + 2.0 * mu / lam**3
        return mu, H, H1, H2

    def noise(self, lam: float) -> float:
        """Rounding-level uncertainty of ``H`` at ``lam``."""
        return (self._eps_base + self._eps_slope * lam + 8 * np.finfo(float).eps * self.kappa * lam**2) / lam


def speed_objective(shear: ShearPath, delta: float, f_prime0: float, lam: float,
                    kappa: float = 1.0):
    """``(H, dH/dlam)`` at one ``lam`` with ``H = mu(lam)/lam``."""
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    _, H, H1, _ = _Objective(shear, delta, f_prime0, kappa).terms(lam)
    return H, H1


def speed_objective_curve(shear: ShearPath, delta: float, f_prime0: float, lambdas,
                          kappa: float = 1.0) -> np.ndarray:
    """``H`` sampled on a set of ``lam`` values (used for scans and plots)."""
    obj = _Objective(shear, delta, f_prime0, kappa)
    return np.array([obj.terms(float(l))[1] for l in lambdas])


def _golden(obj: _Objective, lo: float, hi: float, tol: float, max_iter: int = 200):
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1 = obj.terms(x1)[1]
    f2 = obj.terms(x2)[1]
    it = 0
    while hi - lo > tol and it < max_iter:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = obj.terms(x1)[1]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = obj.terms(x2)[1]
        it += 1
    x = x1 if f1 <= f2 else x2
    return x, it, hi - lo <= tol


def minimal_speed(shear: ShearPath, delta: float, f_prime0: float,
                  opts: SolverOptions | None = None, kappa: float = 1.0) -> SpeedResult:
    """Newton's method with backtracking line search on ``H'``.

    Starts at ``lam0``.  Steps are projected onto the search interval and
    accepted only when they decrease ``H`` (Armijo condition), so the iterates'
    objective values are nonincreasing.  If Newton does not reach the gradient
    tolerance in ``opts.max_iters`` steps, golden-section search on the whole
    interval takes over.
    """
    opts = opts or SolverOptions()
    if not f_prime0 > 0:
        raise ParameterError(f"f'(0) must be positive, got {f_prime0}")
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    lam_hi = math.sqrt(f_prime0 / kappa)
    lam_lo = opts.lambda_min_ratio * lam_hi
    obj = _Objective(shear, delta, f_prime0, kappa)
    trace = []

    lam = lam_hi
    mu, H, H1, H2 = obj.terms(lam)
    if opts.trace:
        trace.append((lam, H))
    converged = False
    it = 0
    while it < opts.max_iters:
        # scaled so the test stays meaningful when H is large (strong shear)
        if abs(H1) <= opts.grad_tol * max(1.0, abs(H)):
            converged = True
            break
        if lam >= lam_hi and H1 < 0:
            # minimizer sits on the upper end of the interval
            converged = True
            break
        if H2 > 0:
            step = -H1 / H2
        else:
            step = -math.copysign(0.1 * lam, H1)
        if H2 > 0 and abs(step) <= opts.step_tol * lam:
            converged = True  # remaining error in H is about H2 * step**2 / 2
            break
        new = min(max(lam + step, lam_lo), lam_hi)
        step = new - lam
        if step == 0.0:
            converged = True
            break
        slack = 2.0 * obj.noise(lam)
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = lam + t * step
            c_mu, c_H, c_H1, c_H2 = obj.terms(cand)
            if c_H <= H + 1e-4 * t * step * H1 + slack:
                accepted = True
                break
            t *= 0.5
        it += 1
        if not accepted:
            break
        if c_H > H:
            # accepted only through the rounding slack: H is at its noise floor
            converged = True
            break
        lam, mu, H, H1, H2 = cand, c_mu, c_H, c_H1, c_H2
        if opts.trace:
            trace.append((lam, H))

    fallback = False
    if not converged:
        fallback = True
        lam_g, g_it, ok = _golden(obj, lam_lo, lam_hi, opts.golden_tol)
        if not ok:
            raise SolverError("neither Newton nor golden section converged",
                              {"newton_iterations": it, "golden_iterations": g_it,
                               "lambda": lam_g})
        mu_g, H_g, _, _ = obj.terms(lam_g)
        if H_g <= H:
            lam, mu, H = lam_g, mu_g, H_g
        it += g_it
        if opts.trace:
            trace.append((lam, H))
        converged = True
    return SpeedResult(c_star=mu / lam, lambda_star=lam, mu_star=mu, iterations=it,
                       converged=converged, fallback_used=fallback, trace=trace)


def scan_minimum(shear: ShearPath, delta: float, f_prime0: float, n: int = 2000,
                 upper: float | None = None, kappa: float = 1.0, refine: bool = True):
    """Brute-force minimum of ``H`` on ``n`` uniform points of ``(0, upper]``.

    With ``refine`` a bounded Brent search over the cells adjacent to the
    best grid point sharpens the estimate; the grid alone is only accurate to
    ``O(spacing**2)``. Returns ``(lam_argmin, H_min)``.
    """
    lam0 = math.sqrt(f_prime0 / kappa)
    upper = lam0 if upper is None else upper
    lams = upper * np.arange(1, n + 1) / n
    H = speed_objective_curve(shear, delta, f_prime0, lams, kappa)
    j = int(np.argmin(H))
    if not refine:
        return float(lams[j]), float(H[j])
    lo, hi = lams[max(j - 1, 0)], lams[min(j + 1, n - 1)]
    obj = lambda x: speed_objective_curve(shear, delta, f_prime0, [x], kappa)[0]
    res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12 * upper})
    if res.fun < H[j]:
        return float(res.x), float(res.fun)
    return float(lams[j]), float(H[j])


def write_trace_csv(result: SpeedResult, file) -> None:
    with open(file, "w") as fh:
        fh.write("lambda,H\n")
        for lam, H in result.trace:
            fh.write(f"{lam:.17g},{H:.17g}\n")
