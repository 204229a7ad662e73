"""Command-line experiment runner.

Experiments are described by flat INI files (one section per concern);
the only flags are the config path, an output-directory override, and
verbosity.  Every run writes CSV data, a JSON summary, and a MANIFEST
recording inputs, library versions, seed, and wall time.  A fixed seed
makes the CSV output byte-identical across runs.

Exit codes: 0 success, 1 experiment failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import analysis, mpc
from .extremal import Perturbation, assemble_kkt, newton_solve, solve_kkt
from .problem import OCPSpec
from .spatial import build_grid
from .timegrid import make_grid

EXPERIMENTS = ("turnpike", "sensitivity", "opnorm_sweep", "mpc_compare", "superposition_suite")


class ConfigError(ValueError):
    """Bad or missing configuration; reported with exit status 2."""


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def emit_plotdata(columns: dict, path: str) -> None:
    """Whitespace-free CSV with one series per column, stable order."""
    keys = list(columns.keys())
    lengths = {len(columns[k]) for k in keys} or {0}
    if len(lengths) > 1:
        raise ValueError("all columns must have equal length")
    nrows = lengths.pop() if lengths else 0
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for i in range(nrows):
            fh.write(",".join(_fmt(columns[k][i]) for k in keys) + "\n")


def _load_config(path: str) -> configparser.ConfigParser:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    return cp


def _build_spec(cp: configparser.ConfigParser) -> OCPSpec:
    p = cp["problem"] if cp.has_section("problem") else {}

    def get(key, default, cast=float):
        return cast(p.get(key, default))

    grid = build_grid(
        get("nx", 31, int),
        get("ny", 11, int),
        get("lx", 3.0),
        get("ly", 1.0),
        p.get("bc", "dirichlet"),
    )
    return OCPSpec(
        grid=grid,
        dynamics=p.get("dynamics", "semilinear"),
        alpha=get("alpha", 0.1),
        reference=p.get("reference", "static"),
        T=get("t", 10.0),
        diffusion=get("diffusion", 0.1),
        e=get("e", 1.0),
        c0=get("c0", 0.0),
        c=get("c", 0.1),
        ref_scale=get("ref_scale", 1.0),
    )


def _build_tgrid(cp: configparser.ConfigParser, T: float):
    t = cp["time"] if cp.has_section("time") else {}
    return make_grid(
        t.get("scheme", "uniform"),
        T,
        int(t.get("n", 64)),
        c=float(t.get("c", 1.0)),
        tau=float(t.get("tau", 1.0)),
    )


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _run_turnpike(cp, outdir, seed, log):
    spec = _build_spec(cp)
    tgrid = _build_tgrid(cp, spec.T)
    mu = None
    if cp.has_section("scaling") and cp["scaling"].get("mu", "auto") != "auto":
        mu = float(cp["scaling"]["mu"])
    res = analysis.turnpike_experiment(spec, tgrid, mu=mu)
    s = analysis.ScalingFunction(analysis.TURNPIKE, mu=res.mu, T=spec.T)
    emit_plotdata(
        {
            "t": res.t,
            "norm_x_dev": res.dev_x,
            "norm_u_dev": res.dev_u,
            "norm_lambda_dev": res.dev_lam,
            "s_t": s(res.t),
        },
        os.path.join(outdir, "turnpike_norms.csv"),
    )
    return {
        "mu": res.mu,
        "mu_hat_in": res.fit_in.mu_hat,
        "r2_in": res.fit_in.r_squared,
        "mu_hat_out": res.fit_out.mu_hat,
        "r2_out": res.fit_out.r_squared,
        "scaled_combined": res.scaled_combined,
    }, ["turnpike_norms.csv"]


def _sensitivity_perturbation(spec, tgrid, magnitude, seed):
    """eps2 supported on [T/2, T]: a fixed spatial profile times a time bump."""
    rng = np.random.default_rng(seed)
    profile = rng.standard_normal(spec.grid.ndof)
    profile /= max(np.max(np.abs(profile)), 1e-30)
    N, n = tgrid.N, spec.grid.ndof
    pert = Perturbation.zero(N, n)
    T = tgrid.T
    t = tgrid.vertices[:-1]
    bump = np.where(t >= T / 2, np.sin(np.pi * np.clip((t - T / 2) / (T / 2), 0, 1)), 0.0)
    pert.eps2[:] = magnitude * bump[:, None] * profile[None, :]
    return pert


def _run_sensitivity(cp, outdir, seed, log):
    spec = _build_spec(cp)
    tgrid = _build_tgrid(cp, spec.T)
    mag = float(cp["scaling"].get("magnitude", 1e-2)) if cp.has_section("scaling") else 1e-2
    pert = _sensitivity_perturbation(spec, tgrid, mag, seed)
    res = analysis.sensitivity_experiment(spec, tgrid, pert)
    s = analysis.ScalingFunction(analysis.FORWARD_EXP, mu=res.mu)
    emit_plotdata(
        {"t": res.t, "norm_dx": res.dx, "norm_du": res.du, "norm_dlambda": res.dlam,
         "s_t": s(res.t)},
        os.path.join(outdir, "sensitivity_norms.csv"),
    )
    T = tgrid.T
    # decay measured against the distance from the perturbation support
    pts = [(T / 2 - t, v) for t, v in zip(res.t, res.dx) if t <= T / 4]
    fit = analysis.fit_decay(sorted(pts))
    return {
        "mu": res.mu,
        "mu_hat": fit.mu_hat,
        "r2": fit.r_squared,
        "scaled_dz": res.scaled_dz,
        "scaled_eps": res.scaled_eps,
    }, ["sensitivity_norms.csv"]


def _run_opnorm_sweep(cp, outdir, seed, log):
    spec = _build_spec(cp)
    tgrid0 = _build_tgrid(cp, spec.T)
    dt = spec.T / (tgrid0.N - 1)
    T_list = _floats(cp["opnorm"].get("t_list", "2,5,10,20")) if cp.has_section("opnorm") else [2, 5, 10, 20]
    n_eps = int(cp["opnorm"].get("n_eps", 20)) if cp.has_section("opnorm") else 20
    from dataclasses import replace

    rng = np.random.default_rng(seed)
    rows = {
        "T": [],
        "opnorm": [],
        "cs_forward": [],
        "cs_turnpike": [],
        "cs_forward_sampled": [],
        "cs_turnpike_sampled": [],
    }
    for T in T_list:
        spec_T = replace(spec, T=float(T))
        N = max(3, int(round(T / dt)) + 1)
        tg = make_grid("uniform", float(T), N)
        z = newton_solve(spec_T, tg)
        K = assemble_kkt(z, spec_T, tg)
        op = analysis.estimate_opnorm(K, seed=seed)
        mu = analysis.choose_mu(op)
        cs = {}
        scalings = {
            "forward": analysis.ScalingFunction(analysis.FORWARD_EXP, mu=mu),
            "turnpike": analysis.ScalingFunction(analysis.TURNPIKE, mu=mu, T=float(T)),
        }
        n = spec.grid.ndof
        for name, sf in scalings.items():
            wEs, wZs = analysis.scaled_kkt_weight_vectors(spec_T, tg, sf)
            sup = analysis.estimate_opnorm(K, wEs, wZs, seed=seed)
            sampled = 0.0
            for _ in range(n_eps):
                eps = Perturbation(
                    rng.standard_normal((N - 1, n)),
                    rng.standard_normal(n),
                    rng.standard_normal((N - 1, n)),
                    rng.standard_normal(n),
                )
                dz = solve_kkt(K, eps)
                num = analysis.scaled_z_norm(dz, spec_T, tg, sf)
                den = analysis.scaled_e_norm(eps, spec_T, tg, sf)
                sampled = max(sampled, num / den)
            cs[name] = (sup, sampled)
        rows["T"].append(float(T))
        rows["opnorm"].append(op)
        rows["cs_forward"].append(cs["forward"][0])
        rows["cs_turnpike"].append(cs["turnpike"][0])
        rows["cs_forward_sampled"].append(cs["forward"][1])
        rows["cs_turnpike_sampled"].append(cs["turnpike"][1])
        if log:
            print(f"T={T}: opnorm={op:.4f}")
    emit_plotdata(rows, os.path.join(outdir, "opnorm.csv"))
    return {
        "opnorm_ratio": max(rows["opnorm"]) / min(rows["opnorm"]),
        "cs_forward_ratio": max(rows["cs_forward"]) / min(rows["cs_forward"]),
        "cs_turnpike_ratio": max(rows["cs_turnpike"]) / min(rows["cs_turnpike"]),
    }, ["opnorm.csv"]


def _run_mpc_compare(cp, outdir, seed, log):
    spec = _build_spec(cp)
    m = cp["mpc"] if cp.has_section("mpc") else {}
    schemes = [s.strip() for s in m.get("schemes", "uniform,exponential,pw_uniform").split(",")]
    for s in schemes:
        if s not in ("uniform", "exponential", "pw_uniform"):
            raise ConfigError(f"unknown time grid scheme {s!r}")
    N_list = [int(x) for x in _floats(m.get("n_list", "5,8,11,21,31,41"))]
    cfg = mpc.MPCConfig(
        T=spec.T,
        tau=float(m.get("tau", 1.0)),
        steps=int(m.get("steps", 4)),
        c=float(m.get("c", 1.0)),
        plant_refinement=int(m.get("plant_refinement", 8)),
    )
    rows = mpc.grid_comparison(spec, cfg, N_list, schemes)
    with open(os.path.join(outdir, "cost_table.csv"), "w") as fh:
        fh.write("scheme,N,cost\n")
        for r in rows:
            fh.write(f"{r['scheme']},{r['N']},{_fmt(r['cost'])}\n")
    cols = {"N": N_list}
    for s in schemes:
        cols[f"cost_{s.replace('_', '')}"] = [
            next(r["cost"] for r in rows if r["scheme"] == s and r["N"] == N)
            for N in N_list
        ]
    emit_plotdata(cols, os.path.join(outdir, "mpc_plot.csv"))
    failures = [r for r in rows if r["error"]]
    return {
        "cells": len(rows),
        "failures": [{"scheme": r["scheme"], "N": r["N"], "error": r["error"]} for r in failures],
    }, ["cost_table.csv", "mpc_plot.csv"]


def _run_superposition(cp, outdir, seed, log):
    spec = _build_spec(cp)
    tgrid = _build_tgrid(cp, spec.T)
    rng = np.random.default_rng(seed)
    grid = spec.grid
    violations = 0
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal((tgrid.N, grid.ndof))
        lhs = analysis.scaled_norm(
            analysis.superposition_apply(3, x), analysis.ScalingFunction(), 2, 2, grid, tgrid
        )
        rhs = analysis.scaled_norm(x, analysis.ScalingFunction(), 6, 6, grid, tgrid) ** 3
        worst = max(worst, lhs / rhs)
        if lhs > rhs * (1 + 1e-12):
            violations += 1
    mags = [10.0 ** (-k / 2) for k in range(0, 9)]
    x0 = rng.standard_normal((tgrid.N, grid.ndof))
    ratios = analysis.superposition_derivative_check(3, x0, mags, grid, tgrid, seed=seed)
    emit_plotdata(
        {"magnitude": mags, "remainder_ratio": ratios,
         "ratio_over_m": [r / m for r, m in zip(ratios, mags)]},
        os.path.join(outdir, "superposition.csv"),
    )
    return {
        "growth_violations": violations,
        "worst_growth_ratio": worst,
        "ratio_over_m_last": ratios[-1] / mags[-1],
    }, ["superposition.csv"]


_RUNNERS = {
    "turnpike": _run_turnpike,
    "sensitivity": _run_sensitivity,
    "opnorm_sweep": _run_opnorm_sweep,
    "mpc_compare": _run_mpc_compare,
    "superposition_suite": _run_superposition,
}


def run(config_path: str, out_dir: str | None = None, verbose: bool = False) -> int:
    try:
        cp = _load_config(config_path)
        if not cp.has_section("experiment"):
            raise ConfigError("missing [experiment] section")
        kind = cp["experiment"].get("kind", "")
        if kind not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment kind {kind!r}; choose from {EXPERIMENTS}")
        seed = int(cp["experiment"].get("seed", 0))
        outdir = out_dir or cp["experiment"].get(
            "out", os.environ.get("PARAOPT_OUT", ".")
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(outdir, exist_ok=True)
    t0 = time.time()
    try:
        summary, files = _RUNNERS[kind](cp, outdir, seed, verbose)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1
    wall = time.time() - t0
    summary_path = os.path.join(outdir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump({"experiment": kind, "seed": seed, **summary}, fh, indent=2, sort_keys=True)
    files.append("summary.json")
    with open(config_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    import scipy

    from . import __version__

    with open(os.path.join(outdir, "MANIFEST"), "w") as fh:
        fh.write(f"experiment: {kind}\n")
        fh.write(f"config: {os.path.abspath(config_path)}\n")
        fh.write(f"config_sha256: {digest}\n")
        fh.write(f"seed: {seed}\n")
        fh.write(f"paraopt: {__version__}\n")
        fh.write(f"numpy: {np.__version__}\n")
        fh.write(f"scipy: {scipy.__version__}\n")
        fh.write(f"wall_time_s: {wall:.3f}\n")
        for f in files:
            fh.write(f"output: {f}\n")
    if verbose:
        print(f"{kind}: done in {wall:.1f}s, outputs in {outdir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="paraopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from an INI config")
    p_run.add_argument("config", help="path to the experiment config file")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, out_dir=args.out, verbose=args.verbose)
    return 2


if __name__ == "__main__":
    sys.exit(main())
