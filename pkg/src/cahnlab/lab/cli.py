"""Command-line entry point: ``cahnlab <subcommand> --config run.cfg ...``.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..dynamics import run
from ..errors import CflViolation, EpsTooLarge, EpsTooSmall, GridMismatch, NonConvergence
from ..functionals import Diagnostics, compute_diagnostics
from ..jko import heat_flow_probe, jko_chain
from ..mollifier import build_kernel, kernel_report
from ..operators import (
    NonlocalOperator,
    b_eps,
    convolve,
    ConvolutionPlan,
    pair_inner,
    pair_product_rule_defect,
    ponce_functional,
    s_eps,
)
from ..torus import Field, State, gradient, inner, random_band_limited, read_snapshot
from .config import ConfigError, LabConfig, load_config
from .io import csv_text, write_csv, write_manifest
from .probes import diff_quotient_probe, poincare_probe
from .sweep import epsilon_sweep, initial_state, write_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _emit(text: str, out: Path | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")


def _manifest(out: Path | None, command: str, argv, cfg: LabConfig | None, t0: float) -> None:
    if out is None:
        return
    echo = cfg.echo() if cfg is not None else "(no config)"
    defaulted = cfg.defaulted if cfg is not None else []
    write_manifest(out / "manifest.txt", command, argv, echo, defaulted, time.perf_counter() - t0)


def cmd_simulate(args, cfg: LabConfig, argv, t0):
    grid = cfg.grid
    fv = cfg.fv()
    s0 = initial_state(cfg.get("sweep", "recipe"), grid, cfg.get("sweep", "seed"))
    if args.system == "nonlocal":
        p = cfg.params(need_eps=True)
        k = build_kernel(cfg.spec, p.eps, grid)
        traj = run(s0, p, k, fv, system="nonlocal")
    else:
        p = cfg.params()
        traj = run(s0, p, None, fv, system="local", c_eff=cfg.spec.c_eff(grid.dim))
    out = Path(args.out)
    write_trajectory(traj, out, cfg.get("solver", "snapshot_every"))
    _manifest(out, "simulate", argv, cfg, t0)


def cmd_jko_run(args, cfg: LabConfig, argv, t0):
    grid = cfg.grid
    p = cfg.params(need_eps=True)
    k = build_kernel(cfg.spec, p.eps, grid)
    jc = cfg.jko()
    if args.tau is not None or args.sigma is not None:
        from dataclasses import replace

        jc = replace(jc, tau=args.tau or jc.tau, sigma=args.sigma or jc.sigma)
    steps = args.steps if args.steps is not None else cfg.get("solver", "steps")
    s0 = initial_state(cfg.get("sweep", "recipe"), grid, cfg.get("sweep", "seed"))
    traj = jko_chain(s0, p, k, jc, steps)
    rows = [[0, traj.energies[0], 0.0, traj.entropies[0], 0.0]]
    for i, st in enumerate(traj.steps, start=1):
        rows.append([i, traj.energies[i], st.divergence, traj.entropies[i], st.objective_start - st.objective_end])
    header = ["n", "energy", "w2_sq_step", "entropy", "objective_gap"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "jko_chain.csv", header, rows)
    _manifest(out, "jko-run", argv, cfg, t0)


def cmd_epsilon_sweep(args, cfg: LabConfig, argv, t0):
    sc = cfg.sweep()
    base = Path(args.out)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    out = base / stamp
    i = 1
    while out.exists():
        out = base / f"{stamp}-{i}"
        i += 1
    workers = args.workers if args.workers is not None else cfg.get("sweep", "workers")
    res = epsilon_sweep(sc, workers=workers, out_dir=out)
    _manifest(out, "epsilon-sweep", argv, cfg, t0)
    print(out)
    return res


def cmd_kernel_check(args, cfg: LabConfig | None, argv, t0):
    from ..mollifier import MollifierSpec
    from ..torus import PeriodicGrid

    if cfg is not None:
        grid, spec = cfg.grid, cfg.spec
        eps_list = [cfg.get("params", "eps")] if cfg.get("params", "eps") else list(cfg.get("sweep", "eps_list"))
    else:
        grid, spec, eps_list = PeriodicGrid(1, 256), MollifierSpec(), [0.2, 0.1, 0.05]
    if args.dim is not None or args.n is not None:
        grid = PeriodicGrid(args.dim or grid.dim, args.n or grid.n)
    if args.target is not None:
        spec = MollifierSpec(spec.profile, args.target)
    if args.eps:
        eps_list = args.eps
    reports = [kernel_report(build_kernel(spec, e, grid)) for e in eps_list]
    text = csv_text(reports[0].csv_header(), [r.csv_row() for r in reports])
    out = Path(args.out) if args.out else None
    _emit(text, out, "kernel_report.csv")
    _manifest(out, "kernel-check", argv, cfg, t0)


def operator_audit_rows(k, seed: int, n_pairs: int = 10):
    """Property suite for the nonlocal operators; rows (check, worst_value, tolerance, passed)."""
    rng = np.random.default_rng(seed)
    g = k.grid
    plan = ConvolutionPlan.from_kernel(k)
    worst = {
        "b_annihilates_constants": 0.0,
        "convolution_preserves_mass": 0.0,
        "b_self_adjoint": 0.0,
        "pair_adjointness": 0.0,
        "pair_product_rule": 0.0,
        "pair_commutes_with_gradient": 0.0,
        "quadratic_form_vs_ponce": 0.0,
        "b_positive_semidefinite": 0.0,
    }
    c = Field.constant(g, 5.0)
    worst["b_annihilates_constants"] = float(np.max(np.abs(b_eps(k, c).values)))
    worst["convolution_preserves_mass"] = float(np.max(np.abs(convolve(plan, Field.constant(g, 1.0)).values - 1.0)))
    for _ in range(n_pairs):
        u = random_band_limited(g, rng, kmax=4)
        phi = random_band_limited(g, rng, kmax=4)
        bu = b_eps(k, u)
        worst["b_self_adjoint"] = max(worst["b_self_adjoint"], abs(inner(bu, phi) - inner(u, b_eps(k, phi))))
        worst["pair_adjointness"] = max(worst["pair_adjointness"], abs(inner(bu, phi) - pair_inner(s_eps(k, u), s_eps(k, phi))))
        worst["pair_product_rule"] = max(worst["pair_product_rule"], pair_product_rule_defect(k, u, phi))
        su = s_eps(k, u)
        for axis, gu in enumerate(gradient(u)):
            sg = s_eps(k, gu)
            for blk_s, blk_g in zip(su.blocks(), sg.blocks()):
                d = np.fft.ifftn(1j * g.wavenumbers_no_nyquist[axis][None] * np.fft.fftn(blk_s, axes=tuple(range(1, g.dim + 1))), axes=tuple(range(1, g.dim + 1))).real
                worst["pair_commutes_with_gradient"] = max(worst["pair_commutes_with_gradient"], float(np.max(np.abs(d - blk_g))))
        q = inner(bu, u)
        worst["quadratic_form_vs_ponce"] = max(worst["quadratic_form_vs_ponce"], abs(q - 0.5 * ponce_functional(k, u)))
        worst["b_positive_semidefinite"] = max(worst["b_positive_semidefinite"], -q)
    tol = {
        "b_annihilates_constants": 1e-12,
        "convolution_preserves_mass": 1e-13,
        "b_self_adjoint": 1e-11,
        "pair_adjointness": 1e-10,
        "pair_product_rule": 1e-11,
        "pair_commutes_with_gradient": 1e-11,
        "quadratic_form_vs_ponce": 1e-9,
        "b_positive_semidefinite": 1e-12,
    }
    rows = [[name, val, tol[name], val <= tol[name]] for name, val in worst.items()]
    return rows


def cmd_operator_audit(args, cfg: LabConfig, argv, t0):
    p = cfg.params(need_eps=True)
    k = build_kernel(cfg.spec, p.eps, cfg.grid)
    rows = operator_audit_rows(k, cfg.get("sweep", "seed"))
    text = csv_text(["check", "value", "tolerance", "passed"], rows)
    out = Path(args.out) if args.out else None
    _emit(text, out, "operator_audit.csv")
    _manifest(out, "operator-audit", argv, cfg, t0)
    return all(r[3] for r in rows)


def cmd_energy_audit(args, cfg: LabConfig, argv, t0):
    rho, _, t_r = read_snapshot(args.rho)
    eta, _, t_e = read_snapshot(args.eta)
    grid = cfg.grid
    if rho.grid != grid or eta.grid != grid:
        raise GridMismatch(f"snapshots live on {rho.grid}, config grid is {grid}")
    p = cfg.params(need_eps=True)
    k = build_kernel(cfg.spec, p.eps, grid)
    s = State(rho, eta, t_r)
    d = compute_diagnostics(s, p, NonlocalOperator(k), k, k.c_eff, cfg.get("solver", "upwind"))
    text = csv_text(Diagnostics.header(), [d.row()])
    out = Path(args.out) if args.out else None
    _emit(text, out, "energy_audit.csv")
    _manifest(out, "energy-audit", argv, cfg, t0)


def cmd_probes(args, cfg: LabConfig, argv, t0):
    grid = cfg.grid
    p = cfg.params(need_eps=True)
    k = build_kernel(cfg.spec, p.eps, grid)
    delta = cfg.get("sweep", "delta")
    size = cfg.get("sweep", "corpus_size")
    seed = cfg.get("sweep", "seed")
    s0 = initial_state(cfg.get("sweep", "recipe"), grid, seed)
    rows = []
    reports = [
        poincare_probe(k, delta, size, seed),
        poincare_probe(k, delta, size, seed, gradient=True),
    ]
    if grid.dim == 1:
        reports.append(heat_flow_probe(s0, p, k))
    fv = cfg.fv()
    from dataclasses import replace

    short = replace(fv, t_end=min(fv.t_end, 1e-3), output_every=min(fv.t_end, 1e-3) / 5)
    traj = run(s0, p, k, short, system="nonlocal")
    reports.append(diff_quotient_probe(traj, k))
    for r in reports:
        for key, v in r.values.items():
            vals = v if isinstance(v, list) else [v]
            for i, x in enumerate(vals):
                name = key if len(vals) == 1 else f"{key}[{i}]"
                rows.append([r.name, name, float(x), r.passed])
    text = csv_text(["probe", "quantity", "value", "passed"], rows)
    out = Path(args.out) if args.out else None
    _emit(text, out, "probes.csv")
    _manifest(out, "probes", argv, cfg, t0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cahnlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="finite-volume run with diagnostics and snapshots")
    sp.add_argument("--system", choices=["nonlocal", "local"], default="nonlocal")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("jko-run", help="minimizing-movement chain")
    sp.add_argument("--config", required=True)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("epsilon-sweep", help="eps -> 0 convergence study")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default="out")
    sp.add_argument("--workers", type=int)

    sp = sub.add_parser("kernel-check", help="moment report of certified kernels (CSV)")
    sp.add_argument("--config")
    sp.add_argument("--eps", type=float, nargs="+")
    sp.add_argument("--dim", type=int, choices=[1, 2])
    sp.add_argument("--n", type=int)
    sp.add_argument("--target", choices=["paper", "laplacian_consistent"])
    sp.add_argument("--out")

    sp = sub.add_parser("operator-audit", help="operator property suite (CSV)")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")

    sp = sub.add_parser("energy-audit", help="diagnostics row for a snapshot pair")
    sp.add_argument("--config", required=True)
    sp.add_argument("--rho", required=True)
    sp.add_argument("--eta", required=True)
    sp.add_argument("--out")

    sp = sub.add_parser("probes", help="Poincare, heat-flow and difference-quotient probes")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    return ap


COMMANDS = {
    "simulate": cmd_simulate,
    "jko-run": cmd_jko_run,
    "epsilon-sweep": cmd_epsilon_sweep,
    "kernel-check": cmd_kernel_check,
    "operator-audit": cmd_operator_audit,
    "energy-audit": cmd_energy_audit,
    "probes": cmd_probes,
}


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else None
        COMMANDS[args.command](args, cfg, argv, t0)
    except (ConfigError, EpsTooSmall, EpsTooLarge, GridMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CflViolation, NonConvergence, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())
