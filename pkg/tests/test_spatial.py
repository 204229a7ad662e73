import numpy as np
import pytest

from paraopt.spatial import (
    BoundaryControl,
    DistributedControl,
    GridError,
    build_elliptic,
    build_grid,
    control_injection,
    inner_l2,
    norm_h1,
    norm_lp,
    smallest_eigenvalue,
)


def test_smallest_neumann_grid():
    g = build_grid(2, 2, 1, 1, "neumann")
    assert g.ndof == 4
    assert g.hx == 1.0 and g.hy == 1.0


def test_dirichlet_interior_dof():
    g = build_grid(4, 4, 3, 1, "dirichlet")
    assert g.ndof == 4
    assert g.hx == 1.0
    assert g.hy == pytest.approx(1 / 3)


def test_reference_scale_grid_dof_count():
    g = build_grid(31, 11, 3, 1, "dirichlet")
    assert g.ndof == 29 * 9


@pytest.mark.parametrize("bad", [(1, 3), (3, 1), (0, 0)])
def test_invalid_dimensions(bad):
    with pytest.raises(GridError):
        build_grid(bad[0], bad[1], 1, 1, "neumann")


def test_invalid_bc_and_lengths():
    with pytest.raises(GridError):
        build_grid(3, 3, 1, 1, "periodic")
    with pytest.raises(GridError):
        build_grid(3, 3, -1, 1, "neumann")


def test_elliptic_kills_constants_neumann():
    g = build_grid(7, 5, 3, 1, "neumann")
    op = build_elliptic(g, 0.1)
    v = np.ones(g.ndof)
    assert np.allclose(op.apply(v), 0.0, atol=1e-13)


def test_elliptic_sine_eigenfield_dirichlet():
    g = build_grid(9, 7, 3, 1, "dirichlet")
    op = build_elliptic(g, 0.1)
    w1, w2 = g.coords
    v = np.sin(np.pi * w1 / g.Lx) * np.sin(np.pi * w2 / g.Ly)
    lam = 0.1 * (
        4 / g.hx**2 * np.sin(np.pi * g.hx / (2 * g.Lx)) ** 2
        + 4 / g.hy**2 * np.sin(np.pi * g.hy / (2 * g.Ly)) ** 2
    )
    assert np.allclose(op.apply(v), lam * v, atol=1e-12)


def test_elliptic_linear_field_neumann_3x3():
    # interior row of a linear field is annihilated; the reflected ghosts
    # leave a residual only on the first/last column of nodes
    g = build_grid(3, 3, 1, 1, "neumann")
    w1, _ = g.coords
    out = build_elliptic(g, 1.0).apply(w1)
    out = out.reshape(3, 3)
    assert np.allclose(out[1, :], 0.0, atol=1e-13)
    assert np.all(out[0, :] != 0) and np.all(out[-1, :] != 0)


def test_elliptic_symmetry_in_quadrature_metric():
    rng = np.random.default_rng(3)
    for bc in ("dirichlet", "neumann"):
        g = build_grid(8, 6, 3, 1, bc)
        op = build_elliptic(g, 0.1)
        f = rng.standard_normal(g.ndof)
        h = rng.standard_normal(g.ndof)
        a = inner_l2(g, op.apply(f), h)
        b = inner_l2(g, f, op.apply(h))
        assert a == pytest.approx(b, rel=1e-12)


def test_elliptic_positive_semidefinite():
    for bc, floor in (("dirichlet", 1e-8), ("neumann", -1e-10)):
        g = build_grid(8, 6, 3, 1, bc)
        op = build_elliptic(g, 0.1)
        assert smallest_eigenvalue(op) >= floor


def test_dirichlet_coercivity():
    g = build_grid(10, 8, 3, 1, "dirichlet")
    op = build_elliptic(g, 0.1)
    rng = np.random.default_rng(5)
    lam_min = smallest_eigenvalue(op)
    assert lam_min > 0
    # the form bounds both the L2 part (Poincare, via lam_min) and the
    # discrete gradient energy (which dominates the H1 gradient term)
    alpha = 0.5 * min(lam_min, op.coeff)
    for _ in range(5):
        v = rng.standard_normal(g.ndof)
        assert inner_l2(g, op.apply(v), v) >= alpha * norm_h1(g, v) ** 2


def test_norms_of_zero_and_constants():
    g = build_grid(7, 5, 3, 1, "neumann")
    z = np.zeros(g.ndof)
    for p in (1, 2, 4, np.inf):
        assert norm_lp(g, z, p) == 0.0
    ones = np.ones(g.ndof)
    assert norm_lp(g, ones, 2) == pytest.approx(np.sqrt(3.0), rel=1e-13)
    c = -2.5
    area = 3.0
    for p in (1, 2, 3):
        assert norm_lp(g, c * ones, p) == pytest.approx(abs(c) * area ** (1 / p), rel=1e-12)
    assert norm_lp(g, c * ones, np.inf) == pytest.approx(abs(c))
    assert norm_h1(g, c * ones) == pytest.approx(abs(c) * np.sqrt(area), rel=1e-12)


def test_norm_lp_rejects_small_p():
    g = build_grid(3, 3, 1, 1, "neumann")
    with pytest.raises(ValueError):
        norm_lp(g, np.zeros(g.ndof), 0.5)


def test_norm_quadrature_convergence():
    # trapezoid quadrature of a smooth integrand converges at least first order
    exact = np.sqrt(
        (1.5 + np.sin(6.0) / 4) * (0.5 + np.sin(2.0) / 4)
    )  # L2 norm of cos(w1)cos(w2) over [0,3]x[0,1]
    errs = []
    for n in (8, 16, 32):
        g = build_grid(3 * n + 1, n + 1, 3, 1, "neumann")
        w1, w2 = g.coords
        errs.append(abs(norm_lp(g, np.cos(w1) * np.cos(w2), 2) - exact))
    assert errs[1] < errs[0] / 2 and errs[2] < errs[1] / 2


def test_distributed_injection_identity_and_empty():
    g = build_grid(6, 4, 3, 1, "dirichlet")
    u = np.ones(g.ndof)
    assert np.array_equal(control_injection(g, u, "distributed"), u)
    empty = np.zeros(g.ndof, dtype=bool)
    out = control_injection(g, np.zeros(0), "distributed", mask=empty)
    assert np.array_equal(out, np.zeros(g.ndof))


def test_boundary_injection_3x3_unit_grid():
    g = build_grid(3, 3, 1, 1, "neumann")
    bc = BoundaryControl(g)
    out = bc.apply(np.ones(bc.dim)).reshape(3, 3)
    h = 0.5
    assert out[1, 1] == 0.0
    # edge midpoints: arc weight h over cell area h^2/2
    for i, j in ((0, 1), (1, 0), (1, 2), (2, 1)):
        assert out[i, j] == pytest.approx(2 / h)
    # corners: arc weight h over cell area h^2/4
    for i, j in ((0, 0), (0, 2), (2, 0), (2, 2)):
        assert out[i, j] == pytest.approx(4 / h)


def test_boundary_injection_requires_neumann():
    g = build_grid(4, 4, 1, 1, "dirichlet")
    with pytest.raises(GridError):
        control_injection(g, np.zeros(1), "boundary")


@pytest.mark.parametrize("ctor", ["distributed", "boundary"])
def test_injection_adjoint_consistency(ctor):
    rng = np.random.default_rng(11)
    g = build_grid(7, 5, 3, 1, "neumann")
    if ctor == "distributed":
        mask = rng.random(g.ndof) < 0.5
        ctrl = DistributedControl(g, mask)
        pair_u = lambda u, v: float(np.dot(ctrl.mass * u, v))
    else:
        ctrl = BoundaryControl(g)
        pair_u = lambda u, v: float(np.dot(ctrl.mass * u, v))
    for _ in range(5):
        u = rng.standard_normal(ctrl.dim)
        lam = rng.standard_normal(g.ndof)
        a = inner_l2(g, ctrl.apply(u), lam)
        b = pair_u(u, ctrl.adjoint(lam))
        assert a == pytest.approx(b, rel=1e-12, abs=1e-14)
