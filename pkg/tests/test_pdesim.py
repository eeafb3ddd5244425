import json
import math

import numpy as np
import pytest

from kppspeed.errors import ParameterError, SimulationError
from kppspeed.pdesim import (DirectEnsemble, FrontState, Nonlinearity, SimulationParams, cfl_numbers,
                             direct_grid, front_position, initial_state, run_direct_ensemble,
                             simulate_front, step)
from kppspeed.shear import Grid, OUParams, ShearPath, realization_stream, sample_ou_path
from kppspeed.varspeed import minimal_speed

KAPPA = 0.025
C0 = 2 * math.sqrt(KAPPA)
GRID = direct_grid(1.0, 0.05)
OU = OUParams(4, 4, 1.0)


@pytest.fixture(scope="module")
def kpp_flat():
    return simulate_front(ShearPath.constant(GRID), 0.0, Nonlinearity.kpp())


def test_nonlinearity_values():
    u = np.array([0.0, 0.2, 0.5, 1.0])
    assert np.allclose(Nonlinearity.kpp()(u), u * (1 - u))
    assert np.allclose(Nonlinearity.combustion(0.3)(u), [0, 0, 0.2 * 0.5, 0])
    assert np.allclose(Nonlinearity.bistable(0.25)(u), u * (1 - u) * (u - 0.25))
    assert Nonlinearity.kpp().f_prime0 == 1.0
    assert Nonlinearity.bistable(0.25).f_prime0 == -0.25
    for bad in (lambda: Nonlinearity("foo"), lambda: Nonlinearity.combustion(1.2),
                lambda: Nonlinearity.bistable(0.6)):
        with pytest.raises(ParameterError):
            bad()


def _state(u, delta=0.0, b=None):
    ny = u.shape[0]
    b = np.zeros(ny) if b is None else b
    return FrontState(u, 0.0, 0.0, 0.05, 0.05, KAPPA, delta, b)


def test_constant_states_are_steady_away_from_the_ends():
    ny, nx = GRID.m, 40
    b = np.linspace(-1, 1, ny)
    for nl in (Nonlinearity.kpp(), Nonlinearity.combustion(), Nonlinearity.bistable()):
        for val in (0.0, 1.0):
            s = step(_state(np.full((ny, nx), val), 0.5, b), nl, 0.004, nsteps=3)
            assert np.all(s.u[:, 8:-8] == val)


def test_cfl_violation_raises():
    s = _state(np.zeros((GRID.m, 20)))
    with pytest.raises(SimulationError):
        step(s, Nonlinearity.kpp(), 0.05)
    diff, adv, react = cfl_numbers(_state(np.zeros((3, 5)), 2.0, np.array([1.0, -3.0, 0.0])),
                                   Nonlinearity.kpp(), 0.004)
    assert diff == pytest.approx(0.004 * 4 * KAPPA / 0.05**2)
    assert adv == pytest.approx(0.004 * KAPPA * 2.0 * 3.0 / 0.05)
    assert react == 0.004


def test_front_position_interpolation_and_translation():
    nx = 50
    ramp = np.clip(1 - 0.1 * (np.arange(nx) - 10), 0, 1)  # crosses 1/2 at j = 15
    s = _state(np.tile(ramp, (GRID.m, 1)))
    assert front_position(s) == pytest.approx(15 * 0.05, abs=1e-12)
    moved = _state(np.tile(np.roll(ramp, 1), (GRID.m, 1)))
    assert front_position(moved) - front_position(s) == pytest.approx(0.05, abs=1e-12)
    with pytest.raises(SimulationError):
        front_position(_state(np.zeros((GRID.m, nx))))


def test_unsheared_kpp_speed(kpp_flat):
    # a pulled front approaches c0 from below at a logarithmic rate
    assert kpp_flat.speed == pytest.approx(C0, rel=0.03)
    assert kpp_flat.speed < C0
    assert kpp_flat.speed_over(0.3) == pytest.approx(kpp_flat.speed, rel=0.01)


def test_unsheared_bistable_speed_exact():
    mu = 0.25
    r = simulate_front(ShearPath.constant(GRID), 0.0, Nonlinearity.bistable(mu))
    assert r.speed == pytest.approx(math.sqrt(2 * KAPPA) * (0.5 - mu), rel=5e-3)


def test_constant_shear_is_a_drift(kpp_flat):
    r = simulate_front(ShearPath.constant(GRID, 1.5), 2.0, Nonlinearity.kpp())
    assert r.speed == pytest.approx(kpp_flat.speed + KAPPA * 2.0 * 1.5, abs=1e-10)


def test_maximum_principle_and_manifest(tmp_path):
    path = sample_ou_path(OU, GRID, realization_stream(1, 0))
    for nl in (Nonlinearity.kpp(), Nonlinearity.combustion()):
        r = simulate_front(path, 4.0, nl, seed=(1, 0))
        assert r.info["u_min"] >= -1e-12 and r.info["u_max"] <= 1 + 1e-8
    r.to_csv(tmp_path / "t.csv")
    r.write_manifest(tmp_path / "m.json")
    assert (tmp_path / "t.csv").read_text().startswith("t,x_f\n")
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["speed"] == r.speed and m["seed"] == [1, 0]


@pytest.mark.parametrize("i", range(2))
def test_direct_speed_matches_variational(i, kpp_flat):
    path = sample_ou_path(OU, GRID, realization_stream(5, i))
    delta = 0.5
    direct = simulate_front(path, delta, Nonlinearity.kpp()).speed
    var = minimal_speed(path, KAPPA * delta, 1.0, kappa=KAPPA).c_star
    assert direct == pytest.approx(var, rel=0.03)
    # shear enhancement, net of the mean drift, is positive
    assert direct - kpp_flat.speed - KAPPA * delta * path.mean > 0


def test_comoving_frame_agrees_with_lab_frame():
    path = sample_ou_path(OU, GRID, realization_stream(2, 0))
    nl = Nonlinearity.bistable()
    a = simulate_front(path, 1.0, nl, comoving=True).speed
    b = simulate_front(path, 1.0, nl, comoving=False).speed
    assert a == pytest.approx(b, rel=0.01)


def test_short_run_rejected():
    with pytest.raises(ParameterError):
        simulate_front(ShearPath.constant(GRID), 0.0, Nonlinearity.kpp(),
                       SimulationParams(t_final=0.1))


def test_direct_ensemble_bookkeeping():
    params = SimulationParams(t_final=40.0)
    e = run_direct_ensemble(OU, [0.5, 1.0], Nonlinearity.kpp(), 2, 11, params)
    assert e.speeds.shape == (2, 2)
    path = sample_ou_path(OU, GRID, realization_stream(11, 1))
    assert e.b_bar[1] == path.mean
    expect = e.speeds - e.c0 - KAPPA * np.array([0.5, 1.0]) * e.b_bar[:, None]
    assert np.allclose(e.M, expect)
    assert np.allclose(e.normalized, expect / e.c0)
    p = DirectEnsemble(e.nonlinearity, e.deltas, 1.0, np.zeros(2),
                       1.0 + 0.3 * np.tile(e.deltas**2, (2, 1)), KAPPA).fit()[0]
    assert p == pytest.approx(2.0, abs=1e-12)
