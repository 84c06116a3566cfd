import math

import numpy as np
import pytest

import fpstab


def test_log_moment_atoms():
    assert fpstab.log_moment(np.array([0.0])) == pytest.approx(0.0)
    assert fpstab.log_moment(np.array([1.0])) == pytest.approx(math.log(2.0))
    three = np.array([-1.0, 0.0, 1.0])
    assert fpstab.log_moment(three) == pytest.approx(2.0 / 3.0 * math.log(2.0))


def test_costs_and_exact_transport():
    x = np.array([0.0])
    y = np.array([1.0])
    assert fpstab.eval_cost("log-squared", 1.0, 2.0, x, y) == pytest.approx(math.log(2.0))
    assert fpstab.eval_cost("power", 1.0, 2.0, np.array([0.0]), np.array([3.0])) == 9.0

    a = np.array([0.0, 1.0])
    b = np.array([0.0, 2.0])
    w = np.array([0.5, 0.5])
    res = fpstab.ot_exact(a, w, b, w, kind="log-squared", delta=1.0)
    assert res["cost"] == pytest.approx(0.5 * math.log(2.0))
    assert res["duality_gap"] < 1e-9
    ent = fpstab.ot_entropic(a, w, b, w, kind="log-squared", delta=1.0, epsilon=1e-3)
    assert ent["cost"] >= res["cost"] - 1e-9
    assert ent["cost"] == pytest.approx(res["cost"], rel=0.01)


def test_wasserstein_and_relations():
    a = np.array([0.0, 2.0])
    b = np.array([1.0, 3.0])
    w = np.array([0.5, 0.5])
    assert fpstab.wasserstein(a, w, b, w, p=2.0) == pytest.approx(1.0)
    rel = fpstab.distance_relations(a, w, b, w, delta=1.0)
    assert rel["pass"]
    assert rel["tilde_d_delta"] <= 2.0 * rel["d_delta"] + 1e-12


def test_osgood_and_phi():
    assert fpstab.osgood_psi(1.0, 1.0, "identity") == pytest.approx(math.log(2.0))
    for delta in (1.0, 1e-2):
        exact = 2.0 * math.sqrt(1.0 + math.log1p(1.0 / delta))
        assert fpstab.phi_delta(lambda m: m * m, delta) == pytest.approx(exact, abs=1e-4)


def test_maximal_function_dominates():
    xs = np.linspace(-2.0, 2.0, 200)
    f = np.sin(3.0 * xs)
    mf = fpstab.maximal_function(f, -2.0, 2.0)
    assert (mf >= np.abs(f) - 1e-12).all()
    smooth = fpstab.mollify(f, -2.0, 2.0, 0.2)
    assert smooth.shape == f.shape


def test_fpe_heat_spreads_mass():
    out = fpstab.fpe_solve(-6.0, 6.0, 300, "zero", {}, "constant", {"value": 1.0},
                           kappa=1.0, horizon=0.25, frames=2)
    values = out["values"]
    xs = np.linspace(-6.0 + 0.02, 6.0 - 0.02, 300)
    dx = 12.0 / 300
    var0 = float(np.sum(values[0] * xs**2) * dx)
    varT = float(np.sum(values[-1] * xs**2) * dx)
    assert varT == pytest.approx(var0 + 0.25, abs=0.02)
    assert float(np.sum(values[-1]) * dx) == pytest.approx(1.0, abs=1e-9)


def test_coupled_cost_curve_zero_for_identical():
    curve = fpstab.coupled_cost_curve("linear", {"rate": -1.0}, "linear", {"rate": -1.0},
                                      sigma=0.5, delta=0.1, particles=500, step=5e-3)
    assert curve[:, 1].max() == 0.0


def test_zvonkin_pipeline_contracts():
    out = fpstab.zvonkin_pipeline(-6.0, 6.0, 120, "sin", {"amp": 1.0}, horizon=1.0)
    assert out["sup_grad_norm"] <= 0.5
    assert out["roundtrip_error"] <= 1e-8


def test_rhs_osgood_hand_value():
    assert fpstab.rhs_osgood(0.0, 0.5, 2.0, 1.0, 0.1, 0.0, 0.1) == pytest.approx(10.0)
