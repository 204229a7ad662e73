"""Receding-horizon model predictive control.

Each step solves the finite-horizon tracking problem on the configured
time grid, applies the control on the implementation window [0, tau],
and advances a "plant" -- the same nonlinear dynamics integrated on a
refinement of the window grid -- to obtain the next initial state.  The
closed-loop cost is accumulated on the plant grid, so grids of different
vertex placement are compared on equal footing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import interp1d

from .extremal import ExtremalPoint, SolverError, newton_solve, recover_control
from .problem import OCPSpec
from .timegrid import TimeGrid, make_grid


@dataclass(frozen=True)
class MPCConfig:
    T: float = 10.0
    tau: float = 1.0
    steps: int = 4
    scheme: str = "uniform"
    N: int = 11
    c: float = 1.0
    plant_refinement: int = 8
    warm_start: bool = True

    def __post_init__(self):
        if not 0 < self.tau <= self.T:
            raise ValueError(f"need 0 < tau <= T, got tau={self.tau}, T={self.T}")
        if self.steps < 1:
            raise ValueError("need at least one MPC step")
        if self.plant_refinement < 1:
            raise ValueError("plant refinement factor must be >= 1")

    def make_tgrid(self) -> TimeGrid:
        return make_grid(self.scheme, self.T, self.N, c=self.c, tau=self.tau)


@dataclass
class ClosedLoopResult:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cost: float
    step_info: list = field(default_factory=list)


def _window_nodes(tgrid: TimeGrid, tau: float) -> np.ndarray:
    """OCP vertices inside [0, tau], with tau appended if it is no vertex."""
    t = tgrid.vertices
    nodes = t[t < tau - 1e-12 * max(1.0, tau)]
    return np.append(nodes, tau)


def _control_interpolant(tgrid: TimeGrid, u_int: np.ndarray):
    """Zero-order hold: u(s) = u_k for s in [t_k, t_{k+1}).

    This is the control signal the backward-Euler discretization
    actually optimizes (one constant value per interval), so the plant
    receives exactly what the controller intended.
    """
    t = tgrid.vertices

    def f(s):
        k = int(np.searchsorted(t, s, side="right")) - 1
        return u_int[min(max(k, 0), u_int.shape[0] - 1)]

    return f


def simulate_plant(
    spec: OCPSpec,
    x_k: np.ndarray,
    window: np.ndarray,
    u_of_t,
    refinement: int,
    newton_tol: float = 1e-11,
):
    """Implicit-Euler rollout on the refined window grid.

    Every window subinterval is split into ``refinement`` equal parts;
    the control is evaluated at each plant step's left endpoint.
    Returns (final state, plant vertices, plant states, plant interval
    controls, cost contribution on the window).
    """
    import scipy.sparse as sp
    from scipy.sparse.linalg import splu

    pts = [window[0]]
    for a, b in zip(window[:-1], window[1:]):
        pts.extend(np.linspace(a, b, refinement + 1)[1:])
    s = np.asarray(pts)
    n = spec.grid.ndof
    op = spec.operator()
    ctrl = spec.control()
    chi_m = spec.obs_indicator() * spec.grid.weights
    mc = ctrl.mass
    eye = sp.identity(n, format="csr")
    x = np.zeros((s.size, n))
    x[0] = x_k
    u_hist = np.zeros((s.size - 1, ctrl.dim))
    cost_acc = 0.0
    for j in range(s.size - 1):
        ds = s[j + 1] - s[j]
        uj = np.atleast_1d(u_of_t(s[j]))
        u_hist[j] = uj
        b = x[j] / ds + ctrl.apply(uj)
        xj1 = x[j].copy()
        for _ in range(50):
            g = xj1 / ds + op.apply(xj1) - b
            if np.linalg.norm(g) <= newton_tol * max(1.0, np.linalg.norm(b)):
                break
            J = eye / ds + op.jac(xj1)
            xj1 = xj1 - splu(J.tocsc()).solve(g)
        else:
            raise SolverError(f"plant step at t={s[j]:.4f} did not converge")
        x[j + 1] = xj1
        dev = xj1 - spec.x_d(s[j + 1])
        cost_acc += ds * (
            0.5 * np.dot(chi_m, dev**2) + 0.5 * spec.alpha * np.dot(mc, uj**2)
        )
    return x[-1], s, x, u_hist, float(cost_acc)


def _shift_warm_start(z: ExtremalPoint, tgrid: TimeGrid, tau: float) -> ExtremalPoint:
    """Previous solution advanced by tau, with the adjoint tail zeroed."""
    t = tgrid.vertices
    shifted = np.clip(t + tau, 0.0, tgrid.T)
    fx = interp1d(t, z.x, axis=0)
    fl = interp1d(t, z.lam, axis=0)
    x = np.asarray(fx(shifted))
    lam = np.asarray(fl(shifted))
    lam[t + tau > tgrid.T] = 0.0
    return ExtremalPoint(x, lam)


def mpc_run(spec: OCPSpec, cfg: MPCConfig) -> ClosedLoopResult:
    """Algorithm: predict on [k tau, k tau + T], implement on the first tau."""
    from dataclasses import replace

    tgrid = cfg.make_tgrid()
    window = _window_nodes(tgrid, cfg.tau)
    x_cur = spec.initial_state()
    z_prev = None
    t_all = [np.array([0.0])]
    x_all = [x_cur[None, :]]
    u_all = []
    total = 0.0
    info = []
    for k in range(cfg.steps):
        spec_k = replace(spec, time_offset=spec.time_offset + k * cfg.tau, x0=x_cur)
        z_init = None
        if cfg.warm_start and z_prev is not None:
            z_init = _shift_warm_start(z_prev, tgrid, cfg.tau)
            z_init.x[0] = x_cur
        try:
            z = newton_solve(spec_k, tgrid, z_init=z_init)
        except SolverError:
            if z_init is None:
                raise SolverError(f"OCP solve failed at MPC step {k}")
            try:
                # warm starts occasionally stall on the quasilinear model;
                # a cold start is slower but more robust
                z = newton_solve(spec_k, tgrid)
            except SolverError as exc:
                raise SolverError(f"OCP solve failed at MPC step {k}: {exc}") from exc
        u_int = recover_control(z.lam, spec_k)[:-1]
        u_of_t = _control_interpolant(tgrid, u_int)
        x_cur, s, xs, us, c = simulate_plant(
            spec_k, x_cur, window, u_of_t, cfg.plant_refinement
        )
        total += c
        t_all.append(s[1:] + k * cfg.tau)
        x_all.append(xs[1:])
        u_all.append(us)
        info.append({"step": k, "window_cost": c})
        z_prev = z
    return ClosedLoopResult(
        t=np.concatenate(t_all),
        x=np.vstack(x_all),
        u=np.vstack(u_all),
        cost=float(total),
        step_info=info,
    )


def grid_comparison(spec: OCPSpec, cfg_base: MPCConfig, N_list, schemes) -> list[dict]:
    """Closed-loop cost per (scheme, N); failures recorded, not raised."""
    from dataclasses import replace

    rows = []
    for scheme in schemes:
        for N in N_list:
            cfg = replace(cfg_base, scheme=scheme, N=int(N))
            try:
                res = mpc_run(spec, cfg)
                rows.append({"scheme": scheme, "N": int(N), "cost": res.cost, "error": ""})
            except Exception as exc:  # per-cell failures are data, not fatal
                rows.append(
                    {"scheme": scheme, "N": int(N), "cost": float("nan"), "error": str(exc)}
                )
    return rows
