import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kppspeed.eigen import assemble_operator, principal_eigenpair, principal_eigenvalue
from kppspeed.errors import ParameterError
from kppspeed.shear import Grid, OUParams, ShearPath, realization_stream, sample_ou_path

P = OUParams(4, 4, 1)


def ou(m, seed, L=1.0):
    return sample_ou_path(OUParams(4, 4, L), Grid(L, m), realization_stream(seed, 0))


def test_m3_constant_mode():
    for L in (0.5, 1.0, 7.0):
        op = assemble_operator(ShearPath.constant(Grid(L, 3)), 1.0, 1.0, 1.0)
        r = principal_eigenpair(op)
        assert r.mu == pytest.approx(2.0, abs=1e-12)
        assert np.allclose(r.phi, 1.0, atol=1e-12)


def test_zero_shear_exact():
    op = assemble_operator(ShearPath.constant(Grid(1, 201)), 1.0, 1.0, 1.0)
    assert principal_eigenpair(op).mu == pytest.approx(2.0, abs=1e-12)


def test_interior_diagonal_entries():
    path = ou(21, 0)
    op = assemble_operator(path, 0.7, 1.3, 1.0)
    expect = 0.49 + 0.7 * 1.3 * path.values + 1.0 - 2 / path.grid.h**2
    assert np.allclose(op.diag[1:-1], expect[1:-1], rtol=1e-15)
    assert np.allclose(op.dense(), op.dense().T)
    with pytest.raises(ParameterError):
        assemble_operator(path, 0.0, 1.0, 1.0)


def test_symmetrization_preserves_spectrum():
    path = ou(15, 4)
    op = assemble_operator(path, 0.8, 2.0, 1.0)
    h2 = path.grid.h**2
    m = path.grid.m
    A = np.diag(op.diag) + np.diag(np.full(m - 1, 1 / h2), 1) + np.diag(np.full(m - 1, 1 / h2), -1)
    A[0, 1] = A[-1, -2] = 2 / h2  # ghost-node rows
    w_raw = np.sort(np.linalg.eigvals(A).real)
    w_sym = np.linalg.eigvalsh(op.dense())
    assert np.allclose(w_raw, w_sym, atol=1e-8)


@given(st.floats(-3, 3), st.floats(0.1, 3), st.floats(0, 5))
@settings(max_examples=30, deadline=None)
def test_shift_identity(c, lam, delta):
    path = ou(41, 2)
    mu0 = principal_eigenvalue(path, lam, delta, 1.0)
    mu1 = principal_eigenvalue(ShearPath(path.grid, path.values + c), lam, delta, 1.0)
    assert mu1 == pytest.approx(mu0 + lam * delta * c, abs=1e-12 * max(1, abs(mu0)) * 10)


@pytest.mark.parametrize("seed", range(21))
def test_against_dense_oracle(seed):
    path = ou(21, 100 + seed)
    rng = np.random.default_rng(seed)
    lam, delta = rng.uniform(0.1, 2), rng.uniform(0, 10)
    op = assemble_operator(path, lam, delta, 1.0)
    r = principal_eigenpair(op)
    w, v = np.linalg.eigh(op.dense())
    assert r.mu == pytest.approx(w[-1], abs=1e-10 * max(1, abs(w[-1])))
    assert np.all(r.phi > 0) and r.phi.max() == 1.0
    assert r.residual <= 1e-10 * (abs(r.mu) + 1)
    lap = principal_eigenpair(op, method="lapack")
    assert lap.mu == pytest.approx(r.mu, abs=1e-10 * max(1, abs(r.mu)))
    assert np.allclose(lap.phi, r.phi, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_rayleigh_bounds(seed):
    path = ou(51, 200 + seed)
    lam, delta = 0.9, 2.0
    mu = principal_eigenvalue(path, lam, delta, 1.0)
    lo = lam**2 + 1 + lam * delta * path.values.min()
    hi = lam**2 + 1 + lam * delta * path.values.max()
    assert lo - 1e-12 <= mu <= hi + 1e-12


def test_cos_perturbation_law():
    g = Grid(1.0, 401)
    path = ShearPath.from_function(g, lambda y: np.cos(2 * np.pi * y))
    k = 1 / (8 * math.pi**2)
    lam = 1.0
    coef = []
    for delta in (0.05, 0.1, 0.2):
        mu = principal_eigenvalue(path, lam, delta, 1.0)
        coef.append((mu - lam**2 - 1) / (lam * delta) ** 2)
    coef = np.array(coef)
    assert np.allclose(coef, k, rtol=5e-3)
    # the coefficient carries a delta-independent O(h^2) offset; its
    # increments expose the O(delta^2) remainder
    d1, d2 = coef[1] - coef[0], coef[2] - coef[1]
    assert 3.5 < d2 / d1 < 4.5


def test_second_order_grid_convergence():
    f = lambda y: np.cos(2 * np.pi * y) + 0.5 * np.sin(3 * y)
    mus = [principal_eigenvalue(ShearPath.from_function(Grid(1, m), f), 0.8, 3.0, 1.0)
           for m in (41, 81, 161)]
    ratio = (mus[0] - mus[1]) / (mus[1] - mus[2])
    assert 3.5 <= ratio <= 4.5


@pytest.mark.parametrize("seed", range(8))
def test_convexity_in_lambda(seed):
    path = ou(101, 300 + seed)
    lams = np.linspace(0.05, 3, 50)
    mu = np.array([principal_eigenvalue(path, l, 4.0, 1.0) for l in lams])
    h = lams[1] - lams[0]
    assert np.all((mu[2:] - 2 * mu[1:-1] + mu[:-2]) / h**2 >= -1e-9)


def test_large_grid_and_amplitude():
    path = ou(1601, 9)
    r = principal_eigenpair(assemble_operator(path, 0.3, 200.0, 1.0))
    w = principal_eigenpair(assemble_operator(path, 0.3, 200.0, 1.0), method="lapack")
    op = assemble_operator(path, 0.3, 200.0, 1.0)
    # both are limited by rounding in A at the level eps * |A| (about 2e-9 here)
    assert abs(r.mu - w.mu) <= 64 * np.finfo(float).eps * op.norm_bound
    assert np.all(r.phi > 0)
