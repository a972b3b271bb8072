"""The eps -> 0 convergence study: nonlocal runs against a local reference."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..dynamics import FvConfig, Trajectory, run
from ..functionals import SystemParams, convexity_certificate, positivity_certificate
from ..mollifier import MollifierSpec, build_kernel
from ..operators import LocalOperator, ponce_spectral_array
from ..torus import (
    Field,
    PeriodicGrid,
    State,
    normalized_state,
    random_band_limited,
    resample,
    spectral_gradient_array,
    write_snapshot,
)
from ..functionals import Diagnostics
from .io import write_csv

RECIPES = ("default", "random", "constant")


def initial_state(recipe: str, grid: PeriodicGrid, seed: int = 0) -> State:
    """Named initial data, normalised to unit mass."""
    c = grid.coords()
    tp = 2.0 * np.pi
    if recipe == "default":
        if grid.dim == 1:
            r = 1 + 0.3 * np.cos(tp * c[0])
            e = 1 + 0.3 * np.sin(tp * c[0])
        else:
            r = 1 + 0.3 * np.cos(tp * c[0]) * np.cos(tp * c[1])
            e = 1 + 0.3 * np.sin(tp * c[0]) * np.sin(tp * c[1])
    elif recipe == "random":
        rng = np.random.default_rng(seed)
        r = random_band_limited(grid, rng, kmax=3, amplitude=0.15, mean=1.0).values
        e = random_band_limited(grid, rng, kmax=3, amplitude=0.15, mean=1.0).values
    elif recipe == "constant":
        r = e = np.ones(grid.shape)
    else:
        raise ValueError(f"unknown recipe {recipe!r}; choose from {RECIPES}")
    return normalized_state(r, e, grid)


@dataclass(frozen=True)
class SweepConfig:
    params: SystemParams = SystemParams(kappa=2.0, alpha=1.0, beta=0.5, gamma=1.0)
    eps_list: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    dim: int = 1
    grid_n: int = 256
    t_end: float = 0.01
    recipe: str = "default"
    seed: int = 0
    spec: MollifierSpec = MollifierSpec()
    solver: str = "fd"
    dt: float = 2e-7
    output_every: float = 2e-5
    stepper: str = "stabilized"
    upwind: str = "central"
    cfl_safety: float = 0.45
    refine_factor: int = 2
    exact_symbol: bool = False
    delta: float = 0.1

    @property
    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.dim, self.grid_n)

    def fv(self) -> FvConfig:
        return FvConfig(
            dt=self.dt,
            t_end=self.t_end,
            cfl_safety=self.cfl_safety,
            upwind=self.upwind,
            stepper=self.stepper,
            adaptive=True,
            output_every=self.output_every,
        )

    def validate(self) -> "SweepConfig":
        g = self.grid
        if not self.eps_list:
            raise ValueError("eps_list is empty")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps_list must be strictly descending")
        for e in self.eps_list:
            if not 2 * g.h < e < 0.5:
                raise ValueError(f"eps={e} outside (2h, 0.5) for n={g.n}")
        if self.solver != "fd":
            raise ValueError("only the finite-volume solver is wired into the sweep")
        self.params.validate()
        pos = positivity_certificate(self.params, self.delta)
        if not pos.admissible:
            raise ValueError(f"positivity certificate fails for delta={self.delta}")
        conv = convexity_certificate(self.params.with_eps(min(self.eps_list)))
        if not conv.admissible:
            raise ValueError(f"convexity certificate fails at eps={min(self.eps_list)}")
        self.fv()
        return self


@dataclass(frozen=True)
class BudgetReport:
    sup_ponce_rho: float
    sup_ponce_eta: float
    int_ponce_grad_rho: float
    int_ponce_grad_eta: float

    @property
    def budget_rho(self) -> float:
        return self.sup_ponce_rho + self.int_ponce_grad_rho

    @property
    def budget_eta(self) -> float:
        return self.sup_ponce_eta + self.int_ponce_grad_eta

    def quantities(self) -> dict[str, float]:
        return {
            "sup_ponce_rho": self.sup_ponce_rho,
            "sup_ponce_eta": self.sup_ponce_eta,
            "int_ponce_grad_rho": self.int_ponce_grad_rho,
            "int_ponce_grad_eta": self.int_ponce_grad_eta,
        }


def compactness_budget(traj: Trajectory, k) -> BudgetReport:
    """sup_t of the Ponce functional of each species and the time integral of that of its gradient."""
    g = k.grid
    times = traj.times
    pr, pe, gr, ge = [], [], [], []
    for s in traj.states:
        pr.append(ponce_spectral_array(k, s.rho.values))
        pe.append(ponce_spectral_array(k, s.eta.values))
        gr.append(sum(ponce_spectral_array(k, c) for c in spectral_gradient_array(s.rho.values, g)))
        ge.append(sum(ponce_spectral_array(k, c) for c in spectral_gradient_array(s.eta.values, g)))
    integ = (lambda v: float(np.trapezoid(v, times))) if len(times) > 1 else (lambda v: 0.0)
    return BudgetReport(max(pr), max(pe), integ(gr), integ(ge))


def _sq_distances(a: State, b: State) -> tuple[float, float]:
    g = a.grid
    hd = g.cell_volume
    l2 = h1 = 0.0
    for u, v in ((a.rho, b.rho), (a.eta, b.eta)):
        d = u.values - v.values
        l2 += hd * float(np.sum(d * d))
        h1 += hd * sum(float(np.sum(c * c)) for c in spectral_gradient_array(d, g))
    return l2, l2 + h1


def trajectory_distance(a: Trajectory, b: Trajectory) -> tuple[float, float]:
    """(L2(0,T;L2), L2(0,T;H1)) distance of two trajectories on a common cadence."""
    ta, tb = a.times, b.times
    if len(ta) != len(tb) or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise ValueError("trajectories are not recorded at common times")
    sq = np.array([_sq_distances(x, y) for x, y in zip(a.states, b.states)])
    if len(ta) == 1:
        return math.sqrt(sq[0, 0]), math.sqrt(sq[0, 1])
    return (
        math.sqrt(float(np.trapezoid(sq[:, 0], ta))),
        math.sqrt(float(np.trapezoid(sq[:, 1], ta))),
    )


def _resample_traj(traj: Trajectory, n: int) -> Trajectory:
    out = Trajectory()
    for s in traj.states:
        out.states.append(State(resample(s.rho, n), resample(s.eta, n), s.time))
    return out


@dataclass
class ErrorReport:
    eps: list[float]
    l2l2: list[float]
    l2h1: list[float]
    budgets: list[BudgetReport]
    fitted_order: float
    intercept: float
    monotone: bool
    reference_error: float
    resolved: bool

    HEADER = ["eps", "l2l2", "l2h1", "budget_rho", "budget_eta", "fitted_order", "resolved_flag"]

    def rows(self) -> list[list]:
        out = []
        last = len(self.eps) - 1
        for i, e in enumerate(self.eps):
            b = self.budgets[i]
            order = self.fitted_order if i == last else ""
            flag = int(self.resolved) if i == last else ""
            out.append([e, self.l2l2[i], self.l2h1[i], b.budget_rho, b.budget_eta, order, flag])
        return out

    def budget_spread(self) -> dict[str, float]:
        """max/min over eps of every compactness quantity."""
        keys = self.budgets[0].quantities().keys()
        spread = {}
        for key in keys:
            vals = [b.quantities()[key] for b in self.budgets]
            lo = min(vals)
            spread[key] = math.inf if lo <= 0 else max(vals) / lo
        return spread


@dataclass
class SweepResult:
    report: ErrorReport
    nonlocal_runs: dict[float, Trajectory] = field(default_factory=dict)
    local_run: Trajectory | None = None


def _run_member(sc: SweepConfig, eps: float | None, n: int | None = None):
    grid = PeriodicGrid(sc.dim, n or sc.grid_n)
    s0 = initial_state(sc.recipe, grid, sc.seed)
    if eps is None:
        c_eff = sc.spec.c_eff(sc.dim)
        return run(s0, sc.params, None, sc.fv(), system="local", c_eff=c_eff)
    k = build_kernel(sc.spec, eps, grid)
    op = LocalOperator(grid, k.c_eff) if sc.exact_symbol else None
    try:
        return run(s0, sc.params.with_eps(eps), k, sc.fv(), system="nonlocal", operator=op)
    except Exception as exc:
        raise type(exc)(f"[eps={eps!r}] {exc}") from exc


def _fit_order(eps, err):
    eps, err = np.asarray(eps), np.asarray(err)
    if len(eps) < 2 or np.any(err <= 0):
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(np.log(eps), np.log(err), 1)
    return float(slope), float(icpt)


def epsilon_sweep(sc: SweepConfig, workers: int = 1, out_dir: str | Path | None = None) -> SweepResult:
    sc.validate()
    jobs = [(sc, e, None) for e in sc.eps_list] + [(sc, None, None)]
    if sc.refine_factor > 1:
        jobs.append((sc, None, sc.grid_n * sc.refine_factor))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_member, *j) for j in jobs]
            results = [f.result() for f in futures]  # reduced in submission (eps) order
    else:
        results = [_run_member(*j) for j in jobs]
    nl = dict(zip(sc.eps_list, results[: len(sc.eps_list)]))
    local = results[len(sc.eps_list)]

    l2l2, l2h1, budgets = [], [], []
    for e in sc.eps_list:
        a, b = trajectory_distance(nl[e], local)
        l2l2.append(a)
        l2h1.append(b)
        budgets.append(compactness_budget(nl[e], build_kernel(sc.spec, e, sc.grid)))
    if sc.refine_factor > 1:
        fine = _resample_traj(results[-1], sc.grid_n)
        ref_err = trajectory_distance(fine, local)[1]
    else:
        ref_err = float("nan")
    order, icpt = _fit_order(sc.eps_list, l2h1)
    monotone = all(b < a for a, b in zip(l2h1, l2h1[1:]))
    resolved = bool(ref_err <= 0.1 * min(l2h1)) if sc.refine_factor > 1 else False
    report = ErrorReport(
        list(sc.eps_list), l2l2, l2h1, budgets, order, icpt, monotone, ref_err, resolved
    )
    result = SweepResult(report, nl, local)
    if out_dir is not None:
        persist_sweep(result, sc, Path(out_dir))
    return result


def write_trajectory(traj: Trajectory, out: Path, snapshot_every: int = 50) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "diagnostics.csv", Diagnostics.header(), [d.row() for d in traj.diagnostics])
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    last = len(traj.states) - 1
    for i, s in enumerate(traj.states):
        if i % snapshot_every == 0 or i == last:
            write_snapshot(snaps / f"rho_{i:05d}.txt", s.rho, "rho", s.time)
            write_snapshot(snaps / f"eta_{i:05d}.txt", s.eta, "eta", s.time)


def persist_sweep(result: SweepResult, sc: SweepConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "error_report.csv", ErrorReport.HEADER, result.report.rows())
    for e, traj in result.nonlocal_runs.items():
        write_trajectory(traj, out / f"eps_{e!r}")
    if result.local_run is not None:
        write_trajectory(result.local_run, out / "local")
    rep = result.report
    spread = rep.budget_spread()
    summary = [
        ["fitted_order", rep.fitted_order],
        ["intercept", rep.intercept],
        ["monotone", rep.monotone],
        ["reference_error", rep.reference_error],
        ["resolved", rep.resolved],
    ] + [[f"spread_{k}", v] for k, v in spread.items()]
    write_csv(out / "sweep_summary.csv", ["quantity", "value"], summary)
