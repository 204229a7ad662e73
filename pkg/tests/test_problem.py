import numpy as np
import pytest

from paraopt.extremal import forward_solve
from paraopt.problem import (
    Conductivity,
    CubicNonlinearity,
    OCPSpec,
    cost,
    dynamics_residual,
    reference_dynamic,
    reference_static,
)
from paraopt.spatial import build_grid, norm_lp
from paraopt.timegrid import uniform_grid


def test_static_reference_peak_and_support():
    assert reference_static(1.5, 0.5) == pytest.approx(10.0)
    assert reference_static(1.5, 0.8) == 0.0  # s = 1, edge of the support
    assert reference_static(0.0, 0.0) == 0.0
    # s = 0.5 corresponds to distance 0.15 from the peak
    assert reference_static(1.5 + 0.15, 0.5) == pytest.approx(10 * np.exp(-1 / 3), rel=1e-12)


def test_static_reference_continuous_at_support_edge():
    s = 1 - 1e-6
    val = reference_static(1.5 + 0.3 * s, 0.5)
    assert 0 <= val < 1e-8


def test_dynamic_reference_peak_path():
    # the peak of the bump travels with cos(pi t / 10)
    assert reference_dynamic(0.0, 0.5, 1.0) == pytest.approx(10.0)
    assert reference_dynamic(5.0, 1.5, 0.0) == pytest.approx(10.0)
    assert reference_dynamic(10.0, 2.5, 1.0) == pytest.approx(10.0)
    assert reference_dynamic(0.0, 2.5, 1.0) == 0.0


def test_cubic_nonlinearity_derivatives():
    nl = CubicNonlinearity(e=2.0, c0=0.5)
    w = np.linspace(-2, 2, 9)
    assert np.allclose(nl.f(w), 2 * w**3 - 0.5 * w)
    assert np.all(nl.fp(w) >= -0.5)
    h = 1e-5
    fd = (nl.f(w + h) - nl.f(w - h)) / (2 * h)
    assert np.allclose(fd, nl.fp(w), atol=1e-8)
    fd2 = (nl.fp(w + h) - nl.fp(w - h)) / (2 * h)
    assert np.allclose(fd2, nl.fpp(w), atol=1e-6)


def test_conductivity_bounded_below():
    k = Conductivity(c=0.1)
    w = np.linspace(-5, 5, 21)
    assert np.all(k.kappa(w) >= 0.1)
    h = 1e-6
    assert np.allclose((k.kappa(w + h) - k.kappa(w - h)) / (2 * h), k.kp(w), atol=1e-7)


@pytest.fixture
def small_spec():
    g = build_grid(6, 4, 3, 1, "dirichlet")
    return OCPSpec(grid=g, alpha=0.1, e=1.0, reference="static", T=2.0)


def test_cost_zero_at_reference(small_spec):
    tg = uniform_grid(small_spec.T, 5)
    xd = np.array([small_spec.x_d(t) for t in tg.vertices])
    u = np.zeros((tg.N - 1, small_spec.grid.ndof))
    assert cost(xd, u, small_spec, tg) == 0.0


def test_cost_of_zero_state(small_spec):
    tg = uniform_grid(small_spec.T, 6)
    x = np.zeros((tg.N, small_spec.grid.ndof))
    u = np.zeros((tg.N - 1, small_spec.grid.ndof))
    xd = small_spec.x_d(0.0)
    expected = small_spec.T / 2 * norm_lp(small_spec.grid, xd, 2) ** 2
    assert cost(x, u, small_spec, tg) == pytest.approx(expected, rel=1e-12)


def test_cost_linear_in_alpha(small_spec):
    from dataclasses import replace

    tg = uniform_grid(small_spec.T, 5)
    rng = np.random.default_rng(0)
    x = np.array([small_spec.x_d(t) for t in tg.vertices])  # kills tracking term
    u = rng.standard_normal((tg.N - 1, small_spec.grid.ndof))
    c1 = cost(x, u, small_spec, tg)
    c2 = cost(x, u, replace(small_spec, alpha=2 * small_spec.alpha), tg)
    assert c2 == pytest.approx(2 * c1, rel=1e-12)


def test_cost_accepts_vertex_based_controls(small_spec):
    tg = uniform_grid(small_spec.T, 5)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((tg.N, small_spec.grid.ndof))
    uv = rng.standard_normal((tg.N, small_spec.grid.ndof))
    assert cost(x, uv, small_spec, tg) == cost(x, uv[1:], small_spec, tg)


def test_dynamics_residual_zero_equilibrium(small_spec):
    tg = uniform_grid(small_spec.T, 5)
    x = np.zeros((tg.N, small_spec.grid.ndof))
    u = np.zeros((tg.N - 1, small_spec.grid.ndof))
    assert np.allclose(dynamics_residual(x, u, small_spec, tg), 0.0)


def test_dynamics_residual_constant_state_neumann():
    g = build_grid(5, 4, 3, 1, "neumann")
    spec = OCPSpec(grid=g, alpha=0.1, e=1.0, c0=0.0, reference="zero", T=1.0)
    tg = uniform_grid(1.0, 4)
    k = 1.7
    x = np.full((tg.N, g.ndof), k)
    u = np.zeros((tg.N - 1, g.ndof))
    res = dynamics_residual(x, u, spec, tg)
    assert np.allclose(res[0], k)  # initial mismatch against x0 = 0
    assert np.allclose(res[1:], k**3, atol=1e-12)


def test_dynamics_residual_scalar_oracle():
    # 1-dof grid: the residual is a scalar backward-Euler defect
    g = build_grid(3, 3, 3, 1, "dirichlet")
    assert g.ndof == 1
    spec = OCPSpec(grid=g, alpha=0.1, e=1.0, reference="zero", T=1.0)
    a = spec.operator().elliptic.mat[0, 0]
    tg = uniform_grid(1.0, 5)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((tg.N, 1))
    u = rng.standard_normal((tg.N - 1, 1))
    res = dynamics_residual(x, u, spec, tg)
    dt = tg.dt
    for k in range(tg.N - 1):
        want = (x[k + 1, 0] - x[k, 0]) / dt[k] + a * x[k + 1, 0] + x[k + 1, 0] ** 3 - u[k, 0]
        assert res[k + 1, 0] == pytest.approx(want, rel=1e-12)


def test_uncontrolled_energy_decay():
    g = build_grid(8, 6, 3, 1, "dirichlet")
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal(g.ndof)
    spec = OCPSpec(grid=g, alpha=0.1, e=1.0, c0=0.0, reference="zero", T=3.0, x0=x0)
    tg = uniform_grid(3.0, 10)
    x = forward_solve(spec, tg, np.zeros((tg.N - 1, g.ndof)))
    norms = [norm_lp(g, row, 2) for row in x]
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


def test_spec_validation():
    g = build_grid(4, 4, 3, 1, "dirichlet")
    with pytest.raises(ValueError):
        OCPSpec(grid=g, alpha=0.0)
    with pytest.raises(ValueError):
        OCPSpec(grid=g, e=-1.0)
    with pytest.raises(ValueError):
        OCPSpec(grid=g, dynamics="bilinear")
    with pytest.raises(ValueError):
        OCPSpec(grid=g, reference="sawtooth")
