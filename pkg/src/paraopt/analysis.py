"""Scaled norms and the diagnostic experiments built on the solvers.

Includes exponential/turnpike scaling functions, Bochner-type trajectory
norms, inverse-power estimation of the KKT solution-operator norm in the
quadrature metric, log-linear decay fitting, turnpike and sensitivity
experiments, the square-root multiplier of the second-order term, and
power-nonlinearity (Nemytskij) operator checks.

The operator norm is measured in weighted discrete 2-norms as a proxy
for mixed Bochner norms; it is used to pick the decay rate mu and to
probe horizon-uniformity, not to certify constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .extremal import (
    ExtremalPoint,
    KKTSystem,
    Perturbation,
    SolverError,
    assemble_kkt,
    newton_solve,
    recover_control,
    solve_kkt,
    solve_static,
)
from .problem import SEMILINEAR, CubicNonlinearity, OCPSpec
from .spatial import SpatialGrid, norm_lp
from .timegrid import TimeGrid, time_weights

UNIT = "unit"
FORWARD_EXP = "forward_exp"
TURNPIKE = "turnpike"


@dataclass(frozen=True)
class ScalingFunction:
    """Positive time weight s(t) for scaled norms."""

    kind: str = UNIT
    mu: float = 0.0
    T: float = 0.0

    def __post_init__(self):
        if self.kind not in (UNIT, FORWARD_EXP, TURNPIKE):
            raise ValueError(f"unknown scaling kind {self.kind!r}")
        if self.kind != UNIT and self.mu <= 0:
            raise ValueError("non-unit scalings need mu > 0")
        if self.kind == TURNPIKE and self.T <= 0:
            raise ValueError("turnpike scaling needs T > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == UNIT:
            return np.ones_like(t)
        if self.kind == FORWARD_EXP:
            return np.exp(-self.mu * t)
        return 1.0 / (np.exp(-self.mu * t) + np.exp(-self.mu * (self.T - t)))


def scaled_norm(
    traj: np.ndarray,
    s: ScalingFunction,
    p_time: float,
    p_space: float,
    grid: SpatialGrid,
    tgrid: TimeGrid,
) -> float:
    """|| s(t) x(t) ||_{L_{p_time}(0,T; L_{p_space})} by vertex quadrature."""
    if p_time < 1 or p_space < 1:
        raise ValueError("norm exponents must be >= 1")
    traj = np.asarray(traj, dtype=float)
    sv = s(tgrid.vertices)
    vals = np.array([norm_lp(grid, row, p_space) for row in traj]) * sv
    if np.isinf(p_time):
        return float(np.max(vals))
    w = time_weights(tgrid)
    return float(np.sum(w * vals**p_time) ** (1.0 / p_time))


def sobolev_norm(
    traj: np.ndarray,
    s: ScalingFunction,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    elliptic,
) -> float:
    """|| s x ||_{L2(0,T; D(A))} + || (s x)' ||_{L2(0,T; L2)}.

    D(A)-norm is the graph norm ||v|| + ||A v||; the time derivative is
    the per-interval difference quotient of the scaled trajectory.
    """
    traj = np.asarray(traj, dtype=float)
    if traj.shape[0] < 2:
        raise ValueError("need at least two time slices")
    y = s(tgrid.vertices)[:, None] * traj
    w = time_weights(tgrid)
    da = np.array(
        [norm_lp(grid, row, 2) + norm_lp(grid, elliptic.apply(row), 2) for row in y]
    )
    part1 = np.sqrt(np.sum(w * da**2))
    dt = tgrid.dt
    dq = (y[1:] - y[:-1]) / dt[:, None]
    part2 = np.sqrt(
        sum(dt[k] * norm_lp(grid, dq[k], 2) ** 2 for k in range(dt.size))
    )
    return float(part1 + part2)


# --- operator-norm estimation ---------------------------------------------
def kkt_weight_vectors(spec: OCPSpec, tgrid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal quadrature metrics (w_E, w_Z) in the packed orderings."""
    N, n = tgrid.N, spec.grid.ndof
    m = spec.grid.weights
    dt = tgrid.dt
    wE = np.empty((N, 2 * n))
    wE[0, :n] = m  # initial-condition row
    wE[-1, n:] = m  # terminal-condition row
    for k in range(N - 1):
        wE[k + 1, :n] = dt[k] * m  # state rows
        wE[k, n:] = dt[k] * m  # adjoint rows
    wv = time_weights(tgrid)
    wZ = np.empty((N, 2 * n))
    wZ[:, :n] = wv[:, None] * m[None, :]
    wZ[:, n:] = wv[:, None] * m[None, :]
    return wE.ravel(), wZ.ravel()


def scaled_kkt_weight_vectors(
    spec: OCPSpec, tgrid: TimeGrid, s: ScalingFunction
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature metrics with the time scaling s(t)^2 folded in.

    Trajectory residual rows are anchored at their interval's left
    vertex, matching scaled_e_norm; solution slices at the vertices.
    Feeding these to estimate_opnorm yields the exact supremum of
    ||s dz|| / ||s eps|| over all right-hand sides.
    """
    wE, wZ = kkt_weight_vectors(spec, tgrid)
    N, n = tgrid.N, spec.grid.ndof
    t = tgrid.vertices
    sE = np.empty((N, 2 * n))
    sE[0, :n] = float(s(0.0)) ** 2
    sE[-1, n:] = float(s(tgrid.T)) ** 2
    for k in range(N - 1):
        sE[k + 1, :n] = float(s(t[k])) ** 2
        sE[k, n:] = float(s(t[k])) ** 2
    sZ = np.repeat(s(t)[:, None] ** 2, 2 * n, axis=1)
    return wE * sE.ravel(), wZ * sZ.ravel()


class PowerIterationError(SolverError):
    """Inverse power iteration failed to settle."""


def estimate_opnorm(
    K,
    wE: np.ndarray | None = None,
    wZ: np.ndarray | None = None,
    spec: OCPSpec | None = None,
    tgrid: TimeGrid | None = None,
    rtol: float = 0.01,
    max_iter: int = 500,
    seed: int = 0,
) -> float:
    """Norm of the KKT solution operator, ||K^{-1}||, in weighted 2-norms.

    Computed as the largest singular value of
    A^{-1} = W_Z^{1/2} K^{-1} W_E^{-1/2} by power iteration on
    A^{-1} A^{-T}, reusing K's sparse LU for both transposes.
    """
    if isinstance(K, KKTSystem):
        if wE is None or wZ is None:
            if spec is None:
                spec, tgrid = K.spec, K.tgrid
            wE, wZ = kkt_weight_vectors(spec, tgrid)
        lu = K.lu
        size = K.mat.shape[0]

        def solve(b):
            return lu.solve(b)

        def solve_t(b):
            return lu.solve(b, trans="T")

    else:
        import scipy.sparse as sp
        from scipy.sparse.linalg import splu

        mat = sp.csc_matrix(K)
        size = mat.shape[0]
        if wE is None:
            wE = np.ones(size)
        if wZ is None:
            wZ = np.ones(size)
        lu = splu(mat)

        def solve(b):
            return lu.solve(b)

        def solve_t(b):
            return lu.solve(b, trans="T")

    sE = np.sqrt(wE)
    sZ = np.sqrt(wZ)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(size)
    v /= np.linalg.norm(v)
    est_prev = None
    history = []
    for _ in range(max_iter):
        # w = A^{-1} A^{-T} v with A^{-1} = W_Z^{1/2} K^{-1} W_E^{-1/2}
        u = solve_t(sZ * v) / sE
        w = sZ * solve(u / sE)
        lam = float(np.dot(v, w))
        nw = np.linalg.norm(w)
        if nw == 0:
            raise PowerIterationError("power iteration collapsed to zero", history)
        v = w / nw
        est = np.sqrt(abs(lam))
        history.append(est)
        if est_prev is not None and abs(est - est_prev) <= rtol * est:
            return est
        est_prev = est
    raise PowerIterationError("power iteration did not settle", history)


def choose_mu(opnorm_estimate: float, theta: float = 0.5) -> float:
    """Decay rate mu = theta / ||K^{-1}||, theta strictly inside (0, 1)."""
    if opnorm_estimate <= 0:
        raise ValueError("operator norm estimate must be positive")
    if not 0 < theta < 1:
        raise ValueError("safety factor theta must lie in (0, 1)")
    return theta / opnorm_estimate


# --- decay fitting ---------------------------------------------------------
NOISE_FLOOR = 1e-14


class DegenerateFitError(ValueError):
    """All samples below the noise floor; nothing to fit."""


@dataclass
class DecayFit:
    mu_hat: float
    r_squared: float
    samples: list = field(default_factory=list)


def fit_decay(samples) -> DecayFit:
    """Least-squares line on (t, ln norm); mu_hat is minus the slope."""
    pts = [(float(t), float(v)) for t, v in samples]
    kept = [(t, v) for t, v in pts if v > NOISE_FLOOR]
    if not kept:
        raise DegenerateFitError("all samples below the noise floor")
    if len(kept) < 3:
        raise ValueError("need at least 3 positive samples")
    t = np.array([p[0] for p in kept])
    y = np.log([p[1] for p in kept])
    slope, intercept = np.polyfit(t, y, 1)
    yhat = slope * t + intercept
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return DecayFit(mu_hat=float(-slope), r_squared=float(min(r2, 1.0)), samples=pts)


# --- scaled norms of solver-native objects ---------------------------------
def scaled_z_norm(z: ExtremalPoint, spec: OCPSpec, tgrid: TimeGrid, s: ScalingFunction) -> float:
    m = spec.grid.weights
    w = time_weights(tgrid)
    sv = s(tgrid.vertices) ** 2
    return float(
        np.sqrt(np.sum((w * sv)[:, None] * (z.x**2 + z.lam**2) * m[None, :]))
    )


def scaled_e_norm(p: Perturbation, spec: OCPSpec, tgrid: TimeGrid, s: ScalingFunction) -> float:
    m = spec.grid.weights
    dt = tgrid.dt
    sv = s(tgrid.vertices[:-1]) ** 2  # trajectory residuals anchored at t_k
    sT = float(s(tgrid.T)) ** 2
    s0 = float(s(0.0)) ** 2
    tot = sT * np.dot(m, p.epsT**2) + s0 * np.dot(m, p.eps0**2)
    tot += np.sum((dt * sv)[:, None] * (p.eps1**2 + p.eps2**2) * m[None, :])
    return float(np.sqrt(tot))


# --- experiments ------------------------------------------------------------
@dataclass
class TurnpikeResult:
    t: np.ndarray
    dev_x: np.ndarray
    dev_u: np.ndarray
    dev_lam: np.ndarray
    fit_in: DecayFit
    fit_out: DecayFit
    scaled_combined: float
    mu: float
    xbar: np.ndarray
    lambar: np.ndarray
    z: ExtremalPoint


def turnpike_experiment(
    spec: OCPSpec, tgrid: TimeGrid, mu: float | None = None
) -> TurnpikeResult:
    """Distance of the dynamic extremal from the steady state over time.

    Solves both problems, reports per-vertex deviations of x, u, lambda,
    log-linear fits toward (on [0, T/2]) and away from (on [T/2, T]) the
    midpoint, and the turnpike-scaled combined deviation norm.
    """
    xbar, lambar, ubar = solve_static(spec)
    n = spec.grid.ndof
    N = tgrid.N
    z_init = ExtremalPoint(np.tile(xbar, (N, 1)), np.tile(lambar, (N, 1)))
    z = newton_solve(spec, tgrid, z_init=z_init)
    u = recover_control(z.lam, spec)
    t = tgrid.vertices
    dev_x = np.array([norm_lp(spec.grid, z.x[i] - xbar, 2) for i in range(N)])
    dev_lam = np.array([norm_lp(spec.grid, z.lam[i] - lambar, 2) for i in range(N)])
    ctrl = spec.control()
    dev_u = np.array([np.sqrt(np.dot(ctrl.mass, (u[i] - ubar) ** 2)) for i in range(N)])
    T = tgrid.T
    half_in = [(ti, d) for ti, d in zip(t, dev_x) if ti <= T / 2]
    half_out = [(ti, d) for ti, d in zip(t, dev_x) if ti >= T / 2]
    try:
        fit_in = fit_decay(half_in)
        fit_out = fit_decay(half_out)
    except DegenerateFitError:
        # already on the turnpike: no deviation to fit
        fit_in = DecayFit(0.0, 1.0, half_in)
        fit_out = DecayFit(0.0, 1.0, half_out)
    if mu is None:
        K = assemble_kkt(z, spec, tgrid)
        mu = choose_mu(estimate_opnorm(K))
    s = ScalingFunction(TURNPIKE, mu=mu, T=T)
    dz = ExtremalPoint(z.x - xbar[None, :], z.lam - lambar[None, :])
    return TurnpikeResult(
        t=t,
        dev_x=dev_x,
        dev_u=dev_u,
        dev_lam=dev_lam,
        fit_in=fit_in,
        fit_out=fit_out,
        scaled_combined=scaled_z_norm(dz, spec, tgrid, s),
        mu=mu,
        xbar=xbar,
        lambar=lambar,
        z=z,
    )


@dataclass
class SensitivityResult:
    t: np.ndarray
    dx: np.ndarray
    du: np.ndarray
    dlam: np.ndarray
    scaled_dz: float
    scaled_eps: float
    mu: float


def sensitivity_experiment(
    spec: OCPSpec, tgrid: TimeGrid, pert: Perturbation, mu: float | None = None
) -> SensitivityResult:
    """Response of the extremal to a right-hand-side perturbation.

    Solves the unperturbed and the perturbed systems and reports
    per-vertex norms of the difference plus the forward-scaled norms of
    both sides of the sensitivity bound.
    """
    z0 = newton_solve(spec, tgrid)
    z1 = newton_solve(spec, tgrid, eps=pert, z_init=z0)
    if mu is None:
        K = assemble_kkt(z0, spec, tgrid)
        mu = choose_mu(estimate_opnorm(K))
    dz = ExtremalPoint(z1.x - z0.x, z1.lam - z0.lam)
    du = recover_control(dz.lam, spec)
    ctrl = spec.control()
    t = tgrid.vertices
    dx = np.array([norm_lp(spec.grid, row, 2) for row in dz.x])
    dlam = np.array([norm_lp(spec.grid, row, 2) for row in dz.lam])
    dun = np.array([np.sqrt(np.dot(ctrl.mass, row**2)) for row in du])
    s = ScalingFunction(FORWARD_EXP, mu=mu)
    return SensitivityResult(
        t=t,
        dx=dx,
        du=dun,
        dlam=dlam,
        scaled_dz=scaled_z_norm(dz, spec, tgrid, s),
        scaled_eps=scaled_e_norm(pert, spec, tgrid, s),
        mu=mu,
    )


# --- second-order term and its square root ---------------------------------
class NonCoercivityError(ValueError):
    """The second-order coefficient went negative somewhere."""

    def __init__(self, min_value: float, where: tuple[int, int]):
        super().__init__(
            f"second-order coefficient {min_value:.6e} < 0 at (time, node) = {where}"
        )
        self.min_value = min_value
        self.where = where


def lxx_field(z0: ExtremalPoint, spec: OCPSpec) -> np.ndarray:
    """Nodal second-order coefficient chi_Omega_o + f''(x0) * lambda0."""
    if spec.dynamics != SEMILINEAR:
        raise ValueError("second-order coefficient is diagonal only for the cubic model")
    chi = spec.obs_indicator()
    nl = CubicNonlinearity(spec.e, spec.c0)
    return chi[None, :] + nl.fpp(z0.x) * z0.lam


def sqrt_multiplier(lxx: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Pointwise square root C with C*C = lxx; errors if lxx dips below -tol."""
    lxx = np.asarray(lxx, dtype=float)
    mn = float(np.min(lxx))
    if mn < -tol:
        where = np.unravel_index(int(np.argmin(lxx)), lxx.shape)
        raise NonCoercivityError(mn, tuple(int(i) for i in where))
    return np.sqrt(np.clip(lxx, 0.0, None))


# --- power (Nemytskij) operators --------------------------------------------
def superposition_apply(d: int, x: np.ndarray) -> np.ndarray:
    """Nodal d-th power of a trajectory."""
    if int(d) != d or d < 1:
        raise ValueError(f"need an integer exponent >= 1, got {d}")
    return np.asarray(x, dtype=float) ** int(d)


def superposition_derivative_check(
    d: int,
    x0: np.ndarray,
    magnitudes,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    direction: np.ndarray | None = None,
    scaling: ScalingFunction | None = None,
    seed: int = 0,
) -> np.ndarray:
    """First-order remainder ratios of the d-th-power map.

    For each magnitude m the ratio is
    ||(x0+m dx)^d - x0^d - d x0^{d-1} m dx||_{L2,L2} / ||m dx||_{L2d,L2d};
    with a scaling it is applied to numerator and denominator alike.
    """
    mags = np.asarray(list(magnitudes), dtype=float)
    if np.any(mags <= 0) or np.any(np.diff(mags) >= 0):
        raise ValueError("magnitudes must be positive and strictly decreasing")
    x0 = np.asarray(x0, dtype=float)
    if direction is None:
        rng = np.random.default_rng(seed)
        direction = rng.standard_normal(x0.shape)
    s = scaling if scaling is not None else ScalingFunction(UNIT)
    out = np.empty(mags.size)
    deriv = d * x0 ** (d - 1)
    for i, m in enumerate(mags):
        dx = m * direction
        rem = (x0 + dx) ** d - x0**d - deriv * dx
        num = scaled_norm(rem, s, 2, 2, grid, tgrid)
        den = scaled_norm(dx, s, 2 * d, 2 * d, grid, tgrid)
        out[i] = num / den if den > 0 else 0.0
    return out
