"""Concrete optimal control problems on the rectangle.

Two model families: a semilinear heat equation with distributed control,

    x' - nu * Laplace(x) + e*x^3 - c0*x = u,

and a quasilinear heat equation with temperature-dependent conductivity
kappa(x) = c*x^2 + 0.1 and Neumann flux control on the boundary.  Both
are discretized with implicit Euler in time; the tracking cost uses a
right-endpoint rectangle rule per interval so that the discrete
optimality system has an exact control elimination u = B* lambda / alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .spatial import (
    NEUMANN,
    BoundaryControl,
    DistributedControl,
    EllipticOperator,
    Field,
    GridError,
    SpatialGrid,
    build_elliptic,
)
from .timegrid import TimeGrid

SEMILINEAR = "semilinear"
QUASILINEAR = "quasilinear"


@dataclass(frozen=True)
class CubicNonlinearity:
    """f(w) = e*w^3 - c0*w with derivatives."""

    e: float = 1.0
    c0: float = 0.0

    def f(self, w):
        return self.e * w**3 - self.c0 * w

    def fp(self, w):
        return 3.0 * self.e * w**2 - self.c0

    def fpp(self, w):
        return 6.0 * self.e * w


@dataclass(frozen=True)
class Conductivity:
    """kappa(w) = c*w^2 + 0.1 with derivatives; bounded below by 0.1."""

    c: float = 0.1

    def kappa(self, w):
        return self.c * w**2 + 0.1

    def kp(self, w):
        return 2.0 * self.c * w

    def kpp(self, w):
        return 2.0 * self.c * np.ones_like(np.asarray(w, dtype=float))


class SemilinearOperator:
    """A(x) = -nu*Laplace(x) + f(x) and its exact linearizations.

    The FD Laplacian is self-adjoint in the quadrature metric and the
    nonlinearity is diagonal, so the adjoint Jacobian equals the
    Jacobian itself.
    """

    def __init__(self, grid: SpatialGrid, diffusion: float, nonlin: CubicNonlinearity):
        self.grid = grid
        self.nonlin = nonlin
        self.elliptic: EllipticOperator = build_elliptic(grid, diffusion)

    def apply(self, x: Field) -> Field:
        return self.elliptic.mat @ x + self.nonlin.f(x)

    def jac(self, x: Field) -> sp.csr_matrix:
        return self.elliptic.mat + sp.diags(self.nonlin.fp(x), format="csr")

    def adj_apply(self, x: Field, lam: Field) -> Field:
        return self.jac(x) @ lam

    def adj_jac(self, x: Field) -> sp.csr_matrix:
        return self.jac(x)

    def hess_lam(self, x: Field, lam: Field) -> sp.csr_matrix:
        return sp.diags(self.nonlin.fpp(x) * lam, format="csr")


class QuasilinearOperator:
    """Edge-based discretization of -div(kappa(x) grad x) on a Neumann grid.

    The operator is generated by the discrete energy
    S(x, lam) = sum_e w_e * kappa_e(x) * (x_q - x_p)(lam_q - lam_p)
    with kappa averaged arithmetically over the edge endpoints and w_e
    the transverse trapezoid weight over the edge length.  N(x) =
    M^{-1} grad_lam S, so Jacobian, adjoint Jacobian, and the
    second-order term are exact derivatives of one scalar function and
    the KKT system stays symmetric in the quadrature metric.
    """

    def __init__(self, grid: SpatialGrid, nonlin: Conductivity):
        if grid.bc != NEUMANN:
            raise GridError("quasilinear operator requires a Neumann grid")
        self.grid = grid
        self.nonlin = nonlin
        rx, ry = grid.dof_shape
        idx = np.arange(rx * ry).reshape(rx, ry)
        wy = np.full(ry, grid.hy)
        wy[0] = wy[-1] = grid.hy / 2
        wx = np.full(rx, grid.hx)
        wx[0] = wx[-1] = grid.hx / 2
        ph = idx[:-1, :].ravel()
        qh = idx[1:, :].ravel()
        wh = np.broadcast_to(wy / grid.hx, (rx - 1, ry)).ravel()
        pv = idx[:, :-1].ravel()
        qv = idx[:, 1:].ravel()
        wv = np.broadcast_to((wx / grid.hy)[:, None], (rx, ry - 1)).ravel()
        self.p = np.concatenate([ph, pv])
        self.q = np.concatenate([qh, qv])
        self.w = np.concatenate([wh, wv])
        self.minv = 1.0 / grid.weights

    def _edge_state(self, x: Field):
        xp, xq = x[self.p], x[self.q]
        ke = 0.5 * (self.nonlin.kappa(xp) + self.nonlin.kappa(xq))
        return xp, xq, ke, xq - xp

    def apply(self, x: Field) -> Field:
        _, _, ke, d = self._edge_state(x)
        flux = self.w * ke * d
        out = np.zeros_like(x)
        np.add.at(out, self.q, flux)
        np.add.at(out, self.p, -flux)
        return self.minv * out

    def _coo(self, rows, cols, vals) -> sp.csr_matrix:
        n = self.grid.ndof
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()

    def jac(self, x: Field) -> sp.csr_matrix:
        xp, xq, ke, d = self._edge_state(x)
        kp_p = self.nonlin.kp(xp)
        kp_q = self.nonlin.kp(xq)
        # rows are entries of grad_lam S; columns differentiate in x
        dq_dp = self.w * (0.5 * kp_p * d - ke)
        dq_dq = self.w * (0.5 * kp_q * d + ke)
        J = self._coo(
            rows=[self.q, self.q, self.p, self.p],
            cols=[self.p, self.q, self.p, self.q],
            vals=[dq_dp, dq_dq, -dq_dp, -dq_dq],
        )
        return sp.diags(self.minv) @ J

    def adj_apply(self, x: Field, lam: Field) -> Field:
        # grad_x S(x, lam) in the quadrature metric
        xp, xq, ke, d = self._edge_state(x)
        D = lam[self.q] - lam[self.p]
        gp = self.w * D * (0.5 * self.nonlin.kp(xp) * d - ke)
        gq = self.w * D * (0.5 * self.nonlin.kp(xq) * d + ke)
        out = np.zeros_like(x)
        np.add.at(out, self.p, gp)
        np.add.at(out, self.q, gq)
        return self.minv * out

    def adj_jac(self, x: Field) -> sp.csr_matrix:
        J = self.jac(x)
        m = self.grid.weights
        return sp.diags(1.0 / m) @ J.T @ sp.diags(m)

    def hess_lam(self, x: Field, lam: Field) -> sp.csr_matrix:
        xp, xq, ke, d = self._edge_state(x)
        D = lam[self.q] - lam[self.p]
        kp_p, kp_q = self.nonlin.kp(xp), self.nonlin.kp(xq)
        kpp_p, kpp_q = self.nonlin.kpp(xp), self.nonlin.kpp(xq)
        hpp = self.w * D * (0.5 * kpp_p * d - kp_p)
        hpq = self.w * D * 0.5 * (kp_p - kp_q)
        hqq = self.w * D * (0.5 * kpp_q * d + kp_q)
        H = self._coo(
            rows=[self.p, self.p, self.q, self.q],
            cols=[self.p, self.q, self.p, self.q],
            vals=[hpp, hpq, hpq, hqq],
        )
        return sp.diags(self.minv) @ H


def reference_static(w1, w2):
    """Smooth bump of height 10 centered at (1.5, 0.5), support radius 0.3."""
    s = (10.0 / 3.0) * np.hypot(np.asarray(w1) - 1.5, np.asarray(w2) - 0.5)
    return _bump(s)


def reference_dynamic(t, w1, w2):
    """Bump whose peak travels along (1.5 - cos(pi t/10), |cos(pi t/10)|)."""
    c = np.cos(np.pi * t / 10.0)
    s = (10.0 / 3.0) * np.hypot(np.asarray(w1) - (1.5 - c), np.asarray(w2) - abs(c))
    return _bump(s)


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = 10.0 * np.exp(1.0 - 1.0 / (1.0 - si**2))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class OCPSpec:
    """One tracking problem: dynamics + cost data on a fixed spatial grid."""

    grid: SpatialGrid
    dynamics: str = SEMILINEAR
    alpha: float = 0.1
    reference: str = "static"
    T: float = 10.0
    diffusion: float = 0.1
    e: float = 1.0
    c0: float = 0.0
    c: float = 0.1
    ref_scale: float = 1.0
    time_offset: float = 0.0
    x0: np.ndarray | None = None
    obs_mask: np.ndarray | None = None
    control_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"need alpha > 0, got {self.alpha}")
        if self.T <= 0:
            raise ValueError(f"need T > 0, got {self.T}")
        if self.e < 0 or self.c < 0:
            raise ValueError("nonlinearity weights must be nonnegative")
        if self.dynamics not in (SEMILINEAR, QUASILINEAR):
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        if self.reference not in ("static", "dynamic", "zero"):
            raise ValueError(f"unknown reference {self.reference!r}")

    def initial_state(self) -> Field:
        if self.x0 is None:
            return self.grid.zeros()
        x0 = np.asarray(self.x0, dtype=float)
        self.grid.check_field(x0)
        return x0

    def operator(self):
        if self.dynamics == SEMILINEAR:
            return SemilinearOperator(
                self.grid, self.diffusion, CubicNonlinearity(self.e, self.c0)
            )
        return QuasilinearOperator(self.grid, Conductivity(self.c))

    def control(self):
        if self.dynamics == SEMILINEAR:
            return DistributedControl(self.grid, self.control_mask)
        return BoundaryControl(self.grid)

    def obs_indicator(self) -> np.ndarray:
        """Nodal indicator of the observation set Omega_o."""
        if self.obs_mask is None:
            return np.ones(self.grid.ndof)
        return self.obs_mask.astype(float)

    def x_d(self, t: float) -> Field:
        w1, w2 = self.grid.coords
        if self.reference == "zero":
            return self.grid.zeros()
        if self.reference == "static":
            vals = reference_static(w1, w2)
        else:
            vals = reference_dynamic(t + self.time_offset, w1, w2)
        return self.ref_scale * np.asarray(vals)

    def shifted(self, dt_offset: float, x0: Field) -> "OCPSpec":
        """Same problem restarted at a later absolute time from state x0."""
        from dataclasses import replace

        return replace(self, time_offset=self.time_offset + dt_offset, x0=x0)


def _interval_controls(u: np.ndarray, N: int) -> np.ndarray:
    """Normalize a control trajectory to one row per time interval.

    Accepts either N-1 rows (interval values) or N rows (vertex values,
    in which case the value at the right endpoint of each interval is
    used, matching the implicit-Euler stencil).
    """
    u = np.asarray(u, dtype=float)
    if u.shape[0] == N - 1:
        return u
    if u.shape[0] == N:
        return u[1:]
    raise ValueError(f"control trajectory has {u.shape[0]} rows, expected {N} or {N - 1}")


def cost(x: np.ndarray, u: np.ndarray, spec: OCPSpec, tgrid: TimeGrid) -> float:
    """Discrete tracking cost.

    Rectangle rule anchored at interval right endpoints:
    sum_k dt_k * [ 1/2 |x_{k+1} - x_d(t_{k+1})|^2_{Omega_o}
                   + alpha/2 |u_k|^2_{Omega_c} ].
    This is the exact objective whose gradient the extremal equations
    annihilate.
    """
    x = np.asarray(x, dtype=float)
    N = tgrid.N
    if x.shape != (N, spec.grid.ndof):
        raise GridError(f"state trajectory shape {x.shape}, expected {(N, spec.grid.ndof)}")
    uu = _interval_controls(u, N)
    ctrl = spec.control()
    if uu.shape[1] != ctrl.dim:
        raise GridError(f"control has {uu.shape[1]} columns, expected {ctrl.dim}")
    chi_m = spec.obs_indicator() * spec.grid.weights
    mc = ctrl.mass
    dt = tgrid.dt
    t = tgrid.vertices
    total = 0.0
    for k in range(N - 1):
        dev = x[k + 1] - spec.x_d(t[k + 1])
        total += dt[k] * (
            0.5 * np.dot(chi_m, dev**2) + 0.5 * spec.alpha * np.dot(mc, uu[k] ** 2)
        )
    return float(total)


def dynamics_residual(
    x: np.ndarray, u: np.ndarray, spec: OCPSpec, tgrid: TimeGrid
) -> np.ndarray:
    """Implicit-Euler defect of the state equation, one row per vertex.

    Row 0 is the initial-condition mismatch x_0 - x0; row k+1 is
    (x_{k+1} - x_k)/dt_k + A(x_{k+1}) - B u_k.
    """
    x = np.asarray(x, dtype=float)
    N = tgrid.N
    if x.shape != (N, spec.grid.ndof):
        raise GridError(f"state trajectory shape {x.shape}, expected {(N, spec.grid.ndof)}")
    uu = _interval_controls(u, N)
    op = spec.operator()
    ctrl = spec.control()
    dt = tgrid.dt
    res = np.zeros_like(x)
    res[0] = x[0] - spec.initial_state()
    for k in range(N - 1):
        res[k + 1] = (x[k + 1] - x[k]) / dt[k] + op.apply(x[k + 1]) - ctrl.apply(uu[k])
    return res
