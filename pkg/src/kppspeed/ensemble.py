"""Monte Carlo ensembles of minimal speeds over random O-U shears.

Each realization ``b_i`` is split into its mean and fluctuation.  A constant
shear only shifts the speed, ``c*(b) = c*(b - bbar) + delta bbar``, so the
per-realization enhancement

    M_i(delta) = c*_i(delta) - c0 - delta bbar_i

removes the mean-field part whose ensemble average is zero but whose variance
is ``O(delta**2)``.  The same realizations are reused for every amplitude.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cellproblem import c0_speed, ou_enh_closed_form, predicted_speed_small_delta, solve_cell_problem
from .errors import DomainError, EnsembleError, KPPError, ParameterError
from .shear import Grid, OUParams, ShearPath, exact_ou_sample, realization_stream, sample_ou_path
from .varspeed import SolverOptions, minimal_speed

MAX_FAILURE_FRACTION = 1e-3


@dataclass(frozen=True)
class EnsembleConfig:
    ou: OUParams
    grid: Grid
    deltas: tuple
    N: int
    master_seed: int = 0
    f_prime0: float = 1.0
    Q: int = 300
    kappa: float = 1.0
    sampler: str = "milstein"

    def __post_init__(self):
        deltas = tuple(float(d) for d in np.atleast_1d(self.deltas))
        object.__setattr__(self, "deltas", deltas)
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not deltas:
            raise ParameterError("at least one amplitude is required")
        # delta = 0 is admitted as the unsheared reference
        if any(d < 0 or not math.isfinite(d) for d in deltas):
            raise ParameterError(f"amplitudes must be finite and non-negative, got {deltas}")
        if any(b <= a for a, b in zip(deltas, deltas[1:])):
            raise ParameterError(f"amplitudes must be strictly increasing, got {deltas}")
        if int(self.Q) != self.Q or self.Q < 2:
            raise ParameterError(f"Q must be an integer >= 2, got {self.Q}")
        if not self.f_prime0 > 0 or not self.kappa > 0:
            raise ParameterError("f'(0) and kappa must be positive")
        if not math.isclose(self.ou.L, self.grid.L, rel_tol=1e-12):
            raise ParameterError(f"O-U width {self.ou.L} differs from grid length {self.grid.L}")
        if self.sampler not in ("milstein", "exact"):
            raise ParameterError(f"unknown sampler {self.sampler!r}")

    @property
    def c0(self) -> float:
        return c0_speed(self.f_prime0, self.kappa)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["deltas"] = list(self.deltas)
        return d


@dataclass(frozen=True)
class Pdf:
    edges: np.ndarray
    density: np.ndarray
    n: int

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def integral(self) -> float:
        return float(np.sum(self.density * self.widths))

    def to_csv(self, file) -> None:
        with open(file, "w") as fh:
            fh.write("bin_lo,bin_hi,density\n")
            for lo, hi, d in zip(self.edges[:-1], self.edges[1:], self.density):
                fh.write(f"{lo:.17g},{hi:.17g},{d:.17g}\n")


@dataclass
class EnsembleResult:
    config: EnsembleConfig
    b_bar: np.ndarray  # (N,)
    k: np.ndarray  # (N,)
    c_star: np.ndarray  # (N, D), NaN for excluded realizations
    M: np.ndarray  # (N, D)
    failures: list = field(default_factory=list)  # (index, message)

    @property
    def used(self) -> np.ndarray:
        return np.all(np.isfinite(self.c_star), axis=1)

    @property
    def n_used(self) -> int:
        return int(self.used.sum())

    @property
    def c0(self) -> float:
        return self.config.c0

    @property
    def deltas(self) -> np.ndarray:
        return np.asarray(self.config.deltas)

    def index(self, delta: float) -> int:
        j = np.flatnonzero(np.isclose(self.deltas, delta, rtol=1e-12, atol=0.0))
        if j.size == 0:
            raise KeyError(f"amplitude {delta} not in ensemble {self.config.deltas}")
        return int(j[0])

    def samples(self, delta: float) -> np.ndarray:
        return self.M[self.used, self.index(delta)]

    @property
    def mean_M(self) -> np.ndarray:
        return self.M[self.used].mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        n = self.n_used
        if n < 2:
            return np.full(len(self.deltas), np.nan)
        return self.M[self.used].std(axis=0, ddof=1) / math.sqrt(n)

    @property
    def mean_speed(self) -> np.ndarray:
        """``Ebar(delta) = c0 + mean(M)``."""
        return self.c0 + self.mean_M

    @property
    def predicted(self) -> np.ndarray:
        """Small-amplitude prediction from the closed-form O-U average of ``k``."""
        cfg = self.config
        enh = ou_enh_closed_form(cfg.ou.a, cfg.ou.r, cfg.ou.L)
        return np.array([predicted_speed_small_delta(enh, d, cfg.f_prime0, cfg.kappa)
                         for d in cfg.deltas])

    def pdf(self, delta: float, Q: int | None = None) -> Pdf:
        return histogram_pdf(self.samples(delta), Q or self.config.Q)

    def fit(self, deltas) -> tuple:
        """Scaling exponent of ``Ebar - c0`` over a subset of the amplitudes."""
        idx = [self.index(d) for d in deltas]
        return fit_scaling_exponent(list(zip(self.deltas[idx], self.mean_M[idx])))

    def write(self, out_dir, pdfs: bool = True) -> list:
        """Summary, per-amplitude samples and PDFs as CSV plus a JSON manifest."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        summary = out / "ensemble_summary.csv"
        with open(summary, "w") as fh:
            fh.write("delta,mean_M,stderr,predicted\n")
            for d, m, se, p in zip(self.deltas, self.mean_M, self.stderr, self.predicted - self.c0):
                fh.write(f"{d:.17g},{m:.17g},{se:.17g},{p:.17g}\n")
        written.append(summary)
        used = self.used
        for j, d in enumerate(self.deltas):
            f = out / f"samples_{d:.10g}.csv"
            with open(f, "w") as fh:
                fh.write("i,b_bar,k,c_star,M\n")
                for i in np.flatnonzero(used):
                    fh.write(f"{i},{self.b_bar[i]:.17g},{self.k[i]:.17g},"
                             f"{self.c_star[i, j]:.17g},{self.M[i, j]:.17g}\n")
            written.append(f)
            if pdfs and self.n_used >= 2 and np.ptp(self.M[used, j]) > 0:
                f = out / f"pdf_{d:.10g}.csv"
                self.pdf(d).to_csv(f)
                written.append(f)
        manifest = out / "manifest.json"
        with open(manifest, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
        written.append(manifest)
        return written

    def manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "master_seed": self.config.master_seed,
            "n_realizations": self.config.N,
            "n_used": self.n_used,
            "n_failed": len(self.failures),
            "failures": [{"index": i, "error": msg} for i, msg in self.failures],
            "statistically_reliable": self.n_used >= 100,
        }


def enhancement_sample(c_star: float, c0: float, delta: float, b_bar: float) -> float:
    """``M = c* - c0 - delta bbar``; zero for any constant shear."""
    return c_star - c0 - delta * b_bar


def draw_path(config: EnsembleConfig, index: int) -> ShearPath:
    """Realization ``index`` of the ensemble's shear (reproducible in isolation)."""
    stream = realization_stream(config.master_seed, index)
    sampler = sample_ou_path if config.sampler == "milstein" else exact_ou_sample
    return sampler(config.ou, config.grid, stream)


def _realizations(config: EnsembleConfig, start: int, stop: int, opts: SolverOptions):
    n = stop - start
    D = len(config.deltas)
    b_bar = np.empty(n)
    k = np.empty(n)
    c = np.full((n, D), np.nan)
    failures = []
    for j, i in enumerate(range(start, stop)):
        path = draw_path(config, i)
        b_bar[j] = path.mean
        k[j] = solve_cell_problem(path.fluctuation, config.grid).k
        try:
            for q, d in enumerate(config.deltas):
                c[j, q] = minimal_speed(path, d, config.f_prime0, opts, config.kappa).c_star
        except KPPError as exc:
            c[j] = np.nan
            failures.append((i, f"{type(exc).__name__}: {exc}"))
    return b_bar, k, c, failures


def _chunk_job(args):
    return _realizations(*args)


def run_ensemble(config: EnsembleConfig, threads: int | None = 1,
                 opts: SolverOptions | None = None, chunk: int = 250) -> EnsembleResult:
    """Speeds for ``N`` realizations at every amplitude of the config.

    Work is split into index ranges; with ``threads > 1`` the ranges run in a
    process pool.  Results are placed by realization index, so the outcome
    does not depend on scheduling.
    """
    opts = opts or SolverOptions()
    threads = threads or os.cpu_count() or 1
    bounds = [(s, min(s + chunk, config.N)) for s in range(0, config.N, chunk)]
    jobs = [(config, s, e, opts) for s, e in bounds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    b_bar = np.concatenate([p[0] for p in parts])
    k = np.concatenate([p[1] for p in parts])
    c = np.concatenate([p[2] for p in parts])
    failures = [f for p in parts for f in p[3]]
    if len(failures) > MAX_FAILURE_FRACTION * config.N:
        raise EnsembleError(f"{len(failures)} of {config.N} realizations failed; first: {failures[0]}")
    deltas = np.asarray(config.deltas)
    M = c - config.c0 - deltas[None, :] * b_bar[:, None]
    return EnsembleResult(config, b_bar, k, c, M, failures)


def fit_scaling_exponent(points):
    """Least-squares line through ``(log delta, log enhancement)``.

    Returns ``(p, intercept, r_squared)`` where ``p`` is the slope.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DomainError("need at least two (delta, enhancement) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("amplitudes and enhancements must be positive for a log-log fit")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    (p, c), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (p * lx + c)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(p), float(c), r2


def histogram_pdf(samples, Q: int, edges=None) -> Pdf:
    """Density histogram on ``Q`` equal bins spanning ``[min, max]``.

    ``pdf_j = count_j / (N * width_j)``.  The last bin is closed so the
    maximum sample is counted.  ``edges`` overrides the range (for comparing
    two sample sets on common bins).
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise DomainError("need at least two samples")
    if edges is None:
        lo, hi = float(x.min()), float(x.max())
        if not hi > lo:
            raise DomainError("all samples are identical; histogram range is degenerate")
        edges = np.linspace(lo, hi, int(Q) + 1)
    edges = np.asarray(edges, dtype=float)
    counts, _ = np.histogram(x, bins=edges)
    density = counts / (x.size * np.diff(edges))
    return Pdf(edges, density, int(x.size))


def pdf_convergence(samples, Q: int) -> float:
    """Relative sup-norm gap between PDFs of all samples and of the first half.

    Both histograms use the bins of the full sample; the gap is divided by the
    peak density of the full-sample PDF.
    """
    x = np.asarray(samples, dtype=float)
    full = histogram_pdf(x, Q)
    half = histogram_pdf(x[: x.size // 2], Q, edges=full.edges)
    return float(np.max(np.abs(full.density - half.density)) / np.max(full.density))


def upper_bounds(shear: ShearPath, chi, delta: float, kappa: float, f_prime0: float):
    """``(g1, g2)`` as printed: ``g1 = 2 kappa f'(0) + delta |b|_inf`` and
    ``g2 = 2 sqrt(kappa + delta**2 |chi_y|_inf / kappa)``.

    ``g1`` is dimensionally consistent only at ``kappa = 1``; see
    :func:`g1_scaled` for the form that bounds ``c*`` for every ``kappa``.
    """
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    b_inf = float(np.max(np.abs(shear.values)))
    g1 = 2.0 * kappa * f_prime0 + delta * b_inf
    g2 = 2.0 * math.sqrt(kappa + delta**2 * chi.grad_sup / kappa)
    return g1, g2


def g1_scaled(shear: ShearPath, delta: float, kappa: float, f_prime0: float) -> float:
    """``2 sqrt(kappa f'(0)) + delta |b|_inf``, which reduces to ``g1`` at ``kappa = 1``."""
    return c0_speed(f_prime0, kappa) + delta * float(np.max(np.abs(shear.values)))
