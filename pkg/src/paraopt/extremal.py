"""Discrete reduced extremal equations and their solvers.

The control is eliminated via u = B* lambda / alpha, leaving a square
system in the state trajectory x and the adjoint trajectory lambda.
Multipliers are indexed so that lambda_k is the multiplier of the
implicit-Euler constraint on interval [t_k, t_{k+1}]; lambda_{N-1}
carries the terminal condition.  With this convention the residual is
the exact gradient of the discrete cost (up to the quadrature weights
dt_k) and the static solution embedded constant-in-time solves the
system exactly under the perturbation (0, lambda_bar, 0, xbar - x0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .problem import OCPSpec, cost
from .spatial import GridError
from .timegrid import TimeGrid, time_weights


class SolverError(RuntimeError):
    """Linear or nonlinear solve failed; carries iterate history."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history) if history is not None else []


class DivergenceError(SolverError):
    """Frozen-Jacobian iteration left its contraction neighborhood."""


@dataclass
class ExtremalPoint:
    """Paired state/adjoint trajectories, one row per time vertex."""

    x: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.x.shape != self.lam.shape or self.x.ndim != 2:
            raise ValueError("state and adjoint trajectories must share an (N, n) shape")

    @classmethod
    def zero(cls, N: int, n: int) -> "ExtremalPoint":
        return cls(np.zeros((N, n)), np.zeros((N, n)))

    def copy(self) -> "ExtremalPoint":
        return ExtremalPoint(self.x.copy(), self.lam.copy())

    def add_scaled(self, other: "ExtremalPoint", a: float) -> "ExtremalPoint":
        return ExtremalPoint(self.x + a * other.x, self.lam + a * other.lam)


@dataclass
class Perturbation:
    """Right-hand-side quadruple (eps1, epsT, eps2, eps0)."""

    eps1: np.ndarray
    epsT: np.ndarray
    eps2: np.ndarray
    eps0: np.ndarray

    def __post_init__(self):
        self.eps1 = np.asarray(self.eps1, dtype=float)
        self.epsT = np.asarray(self.epsT, dtype=float)
        self.eps2 = np.asarray(self.eps2, dtype=float)
        self.eps0 = np.asarray(self.eps0, dtype=float)
        if self.eps1.shape != self.eps2.shape or self.eps1.ndim != 2:
            raise ValueError("eps1/eps2 must share an (N-1, n) shape")
        n = self.eps1.shape[1]
        if self.epsT.shape != (n,) or self.eps0.shape != (n,):
            raise ValueError("epsT/eps0 must be single fields")

    @classmethod
    def zero(cls, N: int, n: int) -> "Perturbation":
        return cls(np.zeros((N - 1, n)), np.zeros(n), np.zeros((N - 1, n)), np.zeros(n))

    def scaled(self, a: float) -> "Perturbation":
        return Perturbation(a * self.eps1, a * self.epsT, a * self.eps2, a * self.eps0)

    def plus(self, other: "Perturbation") -> "Perturbation":
        return Perturbation(
            self.eps1 + other.eps1,
            self.epsT + other.epsT,
            self.eps2 + other.eps2,
            self.eps0 + other.eps0,
        )


def residual(z: ExtremalPoint, spec: OCPSpec, tgrid: TimeGrid,
             eps: Perturbation | None = None) -> Perturbation:
    """Four-component defect of the perturbed extremal equations."""
    N, n = tgrid.N, spec.grid.ndof
    if z.x.shape != (N, n):
        raise GridError(f"trajectory shape {z.x.shape}, expected {(N, n)}")
    if eps is None:
        eps = Perturbation.zero(N, n)
    op = spec.operator()
    ctrl = spec.control()
    chi = spec.obs_indicator()
    dt = tgrid.dt
    t = tgrid.vertices
    bbt = ctrl.bbt_mat()
    r1 = np.zeros((N - 1, n))
    r2 = np.zeros((N - 1, n))
    for k in range(N - 1):
        xk1 = z.x[k + 1]
        r1[k] = (
            chi * (xk1 - spec.x_d(t[k + 1]))
            + (z.lam[k] - z.lam[k + 1]) / dt[k]
            + op.adj_apply(xk1, z.lam[k])
            - eps.eps1[k]
        )
        r2[k] = (
            (xk1 - z.x[k]) / dt[k]
            + op.apply(xk1)
            - (bbt @ z.lam[k]) / spec.alpha
            - eps.eps2[k]
        )
    rT = z.lam[-1] - eps.epsT
    r0 = z.x[0] - spec.initial_state() - eps.eps0
    return Perturbation(r1, rT, r2, r0)


class KKTSystem:
    """Sparse linearization of ``residual`` at a point z0, with LU cache.

    Unknowns are interleaved per vertex ([x_i; lam_i]); equation rows
    are grouped the same way (initial/state row then adjoint/terminal
    row) to keep the factorization bandwidth small.
    """

    def __init__(self, z0: ExtremalPoint, spec: OCPSpec, tgrid: TimeGrid):
        self.spec = spec
        self.tgrid = tgrid
        self.N, self.n = tgrid.N, spec.grid.ndof
        self.mat = self._assemble(z0)
        try:
            self.lu = splu(self.mat.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"KKT factorization failed: {exc}") from exc

    def _assemble(self, z0: ExtremalPoint) -> sp.csr_matrix:
        spec, tgrid = self.spec, self.tgrid
        N, n = self.N, self.n
        op = spec.operator()
        ctrl = spec.control()
        chi = spec.obs_indicator()
        dt = tgrid.dt
        bbt = ctrl.bbt_mat()
        eye = sp.identity(n, format="csr")

        def xcol(i):
            return 2 * n * i

        def lcol(i):
            return 2 * n * i + n

        def arow(i):
            return 2 * n * i

        def brow(i):
            return 2 * n * i + n

        blocks = []

        def put(r, c, B):
            blocks.append((r, c, sp.csr_matrix(B)))

        put(arow(0), xcol(0), eye)  # initial condition row
        put(brow(N - 1), lcol(N - 1), eye)  # terminal condition row
        for k in range(N - 1):
            xk1 = z0.x[k + 1]
            # state equation on interval k lives in row slice k+1
            put(arow(k + 1), xcol(k + 1), eye / dt[k] + op.jac(xk1))
            put(arow(k + 1), xcol(k), -eye / dt[k])
            put(arow(k + 1), lcol(k), -bbt / spec.alpha)
            # adjoint/stationarity row for interval k lives in row slice k
            put(brow(k), xcol(k + 1), sp.diags(chi) + op.hess_lam(xk1, z0.lam[k]))
            put(brow(k), lcol(k), eye / dt[k] + op.adj_jac(xk1))
            put(brow(k), lcol(k + 1), -eye / dt[k])

        size = 2 * n * N
        rows, cols, vals = [], [], []
        for r, c, B in blocks:
            B = B.tocoo()
            rows.append(B.row + r)
            cols.append(B.col + c)
            vals.append(B.data)
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        ).tocsr()

    # --- vector packing -------------------------------------------------
    def pack_rhs(self, p: Perturbation) -> np.ndarray:
        N, n = self.N, self.n
        v = np.zeros(2 * n * N)
        v[0:n] = p.eps0
        v[2 * n * (N - 1) + n:] = p.epsT
        for k in range(N - 1):
            v[2 * n * (k + 1): 2 * n * (k + 1) + n] = p.eps2[k]
            v[2 * n * k + n: 2 * n * (k + 1)] = p.eps1[k]
        return v

    def unpack_rhs(self, v: np.ndarray) -> Perturbation:
        N, n = self.N, self.n
        eps1 = np.zeros((N - 1, n))
        eps2 = np.zeros((N - 1, n))
        eps0 = v[0:n].copy()
        epsT = v[2 * n * (N - 1) + n:].copy()
        for k in range(N - 1):
            eps2[k] = v[2 * n * (k + 1): 2 * n * (k + 1) + n]
            eps1[k] = v[2 * n * k + n: 2 * n * (k + 1)]
        return Perturbation(eps1, epsT, eps2, eps0)

    def pack_z(self, z: ExtremalPoint) -> np.ndarray:
        # (N, 2n) with x then lam per slice, flattened slice-major
        return np.hstack([z.x, z.lam]).ravel()

    def unpack_z(self, v: np.ndarray) -> ExtremalPoint:
        zz = v.reshape(self.N, 2 * self.n)
        return ExtremalPoint(zz[:, : self.n].copy(), zz[:, self.n:].copy())

    def apply(self, z: ExtremalPoint) -> Perturbation:
        return self.unpack_rhs(self.mat @ self.pack_z(z))


def assemble_kkt(z0: ExtremalPoint, spec: OCPSpec, tgrid: TimeGrid) -> KKTSystem:
    if not (np.all(np.isfinite(z0.x)) and np.all(np.isfinite(z0.lam))):
        raise SolverError("non-finite linearization point")
    return KKTSystem(z0, spec, tgrid)


def solve_kkt(K: KKTSystem, rhs: Perturbation) -> ExtremalPoint:
    sol = K.lu.solve(K.pack_rhs(rhs))
    if not np.all(np.isfinite(sol)):
        raise SolverError("KKT solve produced non-finite values")
    return K.unpack_z(sol)


# --- norms --------------------------------------------------------------
def e_norm(p: Perturbation, spec: OCPSpec, tgrid: TimeGrid) -> float:
    """Quadrature-weighted norm of the perturbation space."""
    m = spec.grid.weights
    dt = tgrid.dt
    s = float(np.dot(m, p.epsT**2) + np.dot(m, p.eps0**2))
    s += float(np.sum(dt[:, None] * (p.eps1**2 + p.eps2**2) * m[None, :]))
    return np.sqrt(s)


def z_norm(z: ExtremalPoint, spec: OCPSpec, tgrid: TimeGrid) -> float:
    """Quadrature-weighted norm of the solution space."""
    m = spec.grid.weights
    w = time_weights(tgrid)
    return float(
        np.sqrt(np.sum(w[:, None] * (z.x**2 + z.lam**2) * m[None, :]))
    )


# --- nonlinear solvers ---------------------------------------------------
def newton_solve(
    spec: OCPSpec,
    tgrid: TimeGrid,
    eps: Perturbation | None = None,
    z_init: ExtremalPoint | None = None,
    tol: float = 1e-9,
    max_iter: int = 30,
) -> ExtremalPoint:
    """Damped Newton on the extremal equations (exact Jacobian)."""
    N, n = tgrid.N, spec.grid.ndof
    z = z_init.copy() if z_init is not None else ExtremalPoint.zero(N, n)
    r = residual(z, spec, tgrid, eps)
    rn = e_norm(r, spec, tgrid)
    history = [rn]
    for _ in range(max_iter):
        if rn <= tol:
            return z
        K = assemble_kkt(z, spec, tgrid)
        dz = solve_kkt(K, r)
        step = 1.0
        for _ in range(20):
            z_trial = z.add_scaled(dz, -step)
            r_trial = residual(z_trial, spec, tgrid, eps)
            rn_trial = e_norm(r_trial, spec, tgrid)
            if np.isfinite(rn_trial) and rn_trial < rn:
                break
            step /= 2
        else:
            raise SolverError("Newton backtracking stalled", history)
        z, r, rn = z_trial, r_trial, rn_trial
        history.append(rn)
    if rn <= tol:
        return z
    raise SolverError(f"Newton did not converge: residual {rn:.3e}", history)


def frozen_newton_solve(
    spec: OCPSpec,
    tgrid: TimeGrid,
    eps: Perturbation,
    z0: ExtremalPoint,
    eps0: Perturbation | None = None,
    tol: float = 1e-9,
    max_iter: int = 200,
) -> tuple[ExtremalPoint, list[float]]:
    """Simplified Newton with the Jacobian frozen at the base point z0.

    Returns the converged iterate together with the per-step ratios
    |dz^{k+1}| / |dz^k| in the trajectory norm.  Three consecutive
    ratios >= 1 raise DivergenceError.
    """
    N, n = tgrid.N, spec.grid.ndof
    base = residual(z0, spec, tgrid, eps0)
    if e_norm(base, spec, tgrid) > 1e-6:
        raise SolverError("frozen_newton_solve needs an exact base solution z0")
    K = assemble_kkt(z0, spec, tgrid)
    z = z0.copy()
    ratios: list[float] = []
    prev_step = None
    bad = 0
    for _ in range(max_iter):
        r = residual(z, spec, tgrid, eps)
        if not np.isfinite(e_norm(r, spec, tgrid)):
            raise DivergenceError("iterate left the admissible region", ratios)
        if e_norm(r, spec, tgrid) <= tol:
            return z, ratios
        dz = solve_kkt(K, r)
        step = z_norm(dz, spec, tgrid)
        if prev_step is not None and prev_step > 0:
            ratio = step / prev_step
            ratios.append(ratio)
            bad = bad + 1 if ratio >= 1.0 else 0
            if bad >= 3:
                raise DivergenceError(
                    "contraction lost for 3 consecutive steps", ratios
                )
        prev_step = step
        z = z.add_scaled(dz, -1.0)
    raise SolverError("frozen Newton hit the iteration cap", ratios)


def solve_static(
    spec: OCPSpec, tol: float = 1e-10, max_iter: int = 50
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Steady-state extremal point (xbar, lambdabar, ubar).

    Solves the coupled elliptic system
        chi (xbar - x_d) + A'(xbar)* lambdabar = 0,
        A(xbar) - B B* lambdabar / alpha = 0
    by damped Newton from zero and recovers ubar = B* lambdabar / alpha.
    """
    if spec.reference == "dynamic":
        raise ValueError("static solve needs a time-independent reference")
    n = spec.grid.ndof
    op = spec.operator()
    ctrl = spec.control()
    chi = spec.obs_indicator()
    bbt = ctrl.bbt_mat()
    xd = spec.x_d(0.0)

    def F(x, lam):
        return np.concatenate(
            [chi * (x - xd) + op.adj_apply(x, lam), op.apply(x) - (bbt @ lam) / spec.alpha]
        )

    x = np.zeros(n)
    lam = np.zeros(n)
    r = F(x, lam)
    rn = np.linalg.norm(r)
    history = [rn]
    for _ in range(max_iter):
        if rn <= tol:
            break
        J = sp.bmat(
            [
                [sp.diags(chi) + op.hess_lam(x, lam), op.adj_jac(x)],
                [op.jac(x), -bbt / spec.alpha],
            ],
            format="csc",
        )
        d = splu(J).solve(r)
        step = 1.0
        for _ in range(30):
            xt, lt = x - step * d[:n], lam - step * d[n:]
            rt = F(xt, lt)
            rnt = np.linalg.norm(rt)
            if np.isfinite(rnt) and rnt < rn:
                break
            step /= 2
        else:
            raise SolverError("static Newton backtracking stalled", history)
        x, lam, r, rn = xt, lt, rt, rnt
        history.append(rn)
    if rn > tol:
        raise SolverError(f"static Newton did not converge: {rn:.3e}", history)
    u = ctrl.adjoint(lam) / spec.alpha
    return x, lam, u


def static_as_perturbation(
    xbar: np.ndarray, lambar: np.ndarray, x0: np.ndarray, tgrid: TimeGrid
) -> Perturbation:
    """Perturbation under which the constant-in-time static pair is extremal."""
    N = tgrid.N
    n = xbar.size
    return Perturbation(
        np.zeros((N - 1, n)), lambar.copy(), np.zeros((N - 1, n)), xbar - x0
    )


def recover_control(lam: np.ndarray, spec: OCPSpec) -> np.ndarray:
    """u = B* lambda / alpha, per slice (or for a single field)."""
    ctrl = spec.control()
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 1:
        return ctrl.adjoint(lam) / spec.alpha
    return np.array([ctrl.adjoint(row) for row in lam]) / spec.alpha


# --- plumbing used by tests and experiments -------------------------------
def forward_solve(
    spec: OCPSpec,
    tgrid: TimeGrid,
    u: np.ndarray,
    tol: float = 1e-11,
    max_iter: int = 50,
) -> np.ndarray:
    """Implicit-Euler rollout of the nonlinear dynamics under a given control."""
    from .problem import _interval_controls

    N, n = tgrid.N, spec.grid.ndof
    uu = _interval_controls(u, N)
    op = spec.operator()
    ctrl = spec.control()
    dt = tgrid.dt
    x = np.zeros((N, n))
    x[0] = spec.initial_state()
    eye = sp.identity(n, format="csr")
    for k in range(N - 1):
        b = x[k] / dt[k] + ctrl.apply(uu[k])
        xk1 = x[k].copy()
        for _ in range(max_iter):
            g = xk1 / dt[k] + op.apply(xk1) - b
            gn = np.linalg.norm(g)
            if gn <= tol * max(1.0, np.linalg.norm(b)):
                break
            Jk = eye / dt[k] + op.jac(xk1)
            xk1 = xk1 - splu(Jk.tocsc()).solve(g)
        else:
            raise SolverError(f"implicit Euler step {k} did not converge")
        x[k + 1] = xk1
    return x


def adjoint_solve(spec: OCPSpec, tgrid: TimeGrid, x: np.ndarray) -> np.ndarray:
    """Backward sweep for the multipliers given a state trajectory."""
    N, n = tgrid.N, spec.grid.ndof
    op = spec.operator()
    chi = spec.obs_indicator()
    dt = tgrid.dt
    t = tgrid.vertices
    lam = np.zeros((N, n))
    eye = sp.identity(n, format="csr")
    for k in range(N - 2, -1, -1):
        rhs = lam[k + 1] / dt[k] - chi * (x[k + 1] - spec.x_d(t[k + 1]))
        A = eye / dt[k] + op.adj_jac(x[k + 1])
        lam[k] = splu(A.tocsc()).solve(rhs)
    return lam


def reduced_gradient(
    spec: OCPSpec, tgrid: TimeGrid, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of the discrete cost with respect to the control entries.

    Returns (gradient, state, adjoint); gradient[k, i] equals
    dJ/du_{k,i} = dt_k * mc_i * (alpha*u_k - B* lambda_k)_i, the exact
    derivative of ``cost`` on the same grids.
    """
    from .problem import _interval_controls

    N = tgrid.N
    uu = _interval_controls(u, N)
    x = forward_solve(spec, tgrid, uu)
    lam = adjoint_solve(spec, tgrid, x)
    ctrl = spec.control()
    dt = tgrid.dt
    grad = np.empty_like(uu)
    for k in range(N - 1):
        grad[k] = dt[k] * ctrl.mass * (spec.alpha * uu[k] - ctrl.adjoint(lam[k]))
    return grad, x, lam


def optimal_cost(spec: OCPSpec, tgrid: TimeGrid, **kw) -> tuple[float, ExtremalPoint]:
    """Solve the OCP and evaluate its discrete cost."""
    z = newton_solve(spec, tgrid, **kw)
    u = recover_control(z.lam, spec)[:-1]
    return cost(z.x, u, spec, tgrid), z
