"""Minimizing-movement (JKO) steps on 1D periodic grids via entropic optimal transport.

Distances are entropic OT values on the grid masses a_i = h * rho_i with the
wrapped quadratic cost.  Inside a JKO step the transport term is the debiased
Sinkhorn divergence

    S(a, b) = OT(a, b) - OT(a, a)/2 - OT(b, b)/2,

which vanishes at b = a, so the previous state is always feasible with
objective E[u^n].  The new state is parameterised by softmax logits, which
keeps it positive with exact unit mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize
from scipy.special import logsumexp, softmax

from .errors import NonConvergence
from .functionals import (
    SystemParams,
    energy_nonlocal,
    entropy,
    entropy_dissipation,
    positivity_certificate,
    potentials_with_operator,
)
from .mollifier import DiscreteKernel
from .operators import NonlocalOperator
from .torus import Field, PeriodicGrid, State, integrate_array

INNER_SOLVERS = ("lbfgs", "mirror_descent")


@dataclass(frozen=True, eq=False)
class TransportProblem:
    grid: PeriodicGrid
    sigma: float
    max_iters: int = 20000
    tol: float = 1e-12

    def __post_init__(self):
        if self.grid.dim != 1:
            raise ValueError("transport problems are implemented on 1D grids only")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @cached_property
    def cost(self) -> np.ndarray:
        x = self.grid.axis_coords
        d = np.abs(x[:, None] - x[None, :])
        d = np.minimum(d, 1.0 - d)
        return d * d


@dataclass
class OTResult:
    cost: float  # <C, plan>, the transport part
    entropic: float  # sigma * KL(plan | a x b)
    value: float  # regularised optimum = cost + entropic
    plan: np.ndarray
    f: np.ndarray
    g: np.ndarray
    converged: bool
    iterations: int
    marginal_error: float


def _masses(f: Field) -> np.ndarray:
    return np.asarray(f.values, dtype=float) * f.grid.h


EXP_DOMAIN_LIMIT = 300.0


def _sinkhorn_scaling(a, b, kern, sigma, f, g, max_iters, tol, symmetric):
    # multiplicative form; safe while exp(-C/sigma) and the scalings stay in range
    k = np.exp(kern)
    u, v = np.exp(f / sigma), np.exp(g / sigma)
    it = 0
    for it in range(1, max_iters + 1):
        if symmetric:
            u = np.sqrt(u / (k @ (a * u)))
            v = u
        else:
            u = 1.0 / (k @ (b * v))
            v = 1.0 / (k.T @ (a * u))
        if it % 10 == 0:
            row = a * u * (k @ (b * v))
            if float(np.sum(np.abs(row - a))) < tol:
                break
    return sigma * np.log(u), sigma * np.log(v), it


def _sinkhorn_log(a, b, la, lb, kern, sigma, f, g, max_iters, tol, symmetric):
    it = 0
    for it in range(1, max_iters + 1):
        if symmetric:
            t = -sigma * logsumexp(kern + (f / sigma + la)[None, :], axis=1)
            f = 0.5 * (f + t)
            g = f
        else:
            f = -sigma * logsumexp(kern + (g / sigma + lb)[None, :], axis=1)
            g = -sigma * logsumexp(kern + (f / sigma + la)[:, None], axis=0)
        if it % 10 == 0:
            lp = kern + (f / sigma + la)[:, None] + (g / sigma + lb)[None, :]
            row = np.exp(logsumexp(lp, axis=1))
            if float(np.sum(np.abs(row - a))) < tol:
                break
    return f, g, it


def sinkhorn(a, b, cost, sigma, max_iters=20000, tol=1e-12, f0=None, g0=None, symmetric=False):
    """Sinkhorn iterations for min <C,P> + sigma KL(P | a x b).

    Runs in the multiplicative form when exp(-C/sigma) cannot underflow and
    in the log domain otherwise.

    With ``symmetric`` (a == b) the averaged fixed-point iteration is used and
    f == g on return.
    """
    la = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), -np.inf)
    lb = np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), -np.inf)
    f = np.zeros_like(a) if f0 is None else f0.copy()
    g = np.zeros_like(b) if g0 is None else g0.copy()
    kern = -cost / sigma
    if cost.max() / sigma < EXP_DOMAIN_LIMIT:
        f, g, it = _sinkhorn_scaling(a, b, kern, sigma, f, g, max_iters, tol, symmetric)
    else:
        f, g, it = _sinkhorn_log(a, b, la, lb, kern, sigma, f, g, max_iters, tol, symmetric)
    lp = kern + (f / sigma + la)[:, None] + (g / sigma + lb)[None, :]
    plan = np.exp(lp)
    col = plan.sum(axis=0)
    err = max(float(np.sum(np.abs(plan.sum(axis=1) - a))), float(np.sum(np.abs(col - b))))
    value = float(np.dot(f, a) + np.dot(g, b))
    c = float(np.sum(cost * plan))
    return OTResult(c, value - c, value, plan, f, g, err < tol * 10, it, err)


def wasserstein_periodic(mu: Field, nu: Field, tp: TransportProblem, raise_on_fail: bool = False) -> OTResult:
    """Entropic OT between two densities; ``cost`` is the unregularised transport cost of the plan."""
    mu.grid.require_same(nu.grid)
    tp.grid.require_same(mu.grid)
    a, b = _masses(mu), _masses(nu)
    for name, m in (("mu", a), ("nu", b)):
        if m.min() < 0 or abs(m.sum() - 1.0) > 1e-10:
            raise ValueError(f"{name} must be a nonnegative unit-mass density")
    res = sinkhorn(a, b, tp.cost, tp.sigma, tp.max_iters, tp.tol)
    if raise_on_fail and not res.converged:
        raise NonConvergence(f"Sinkhorn stopped at marginal error {res.marginal_error:.3e}", res)
    return res


def sinkhorn_divergence(a: np.ndarray, b: np.ndarray, tp: TransportProblem) -> float:
    c = tp.cost
    ab = sinkhorn(a, b, c, tp.sigma, tp.max_iters, tp.tol)
    aa = sinkhorn(a, a, c, tp.sigma, tp.max_iters, tp.tol, symmetric=True)
    bb = sinkhorn(b, b, c, tp.sigma, tp.max_iters, tp.tol, symmetric=True)
    return ab.value - 0.5 * (aa.value + bb.value)


def product_distance(u: State, v: State, tp: TransportProblem) -> float:
    """Sum of per-species entropic transport costs."""
    return (
        wasserstein_periodic(u.rho, v.rho, tp).cost + wasserstein_periodic(u.eta, v.eta, tp).cost
    )


def exact_ot_lp(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    """Unregularised discrete OT value by linear programming (small instances only)."""
    n, m = cost.shape
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    res = optimize.linprog(
        cost.ravel(), A_eq=a_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs"
    )
    if not res.success:
        raise NonConvergence(f"LP solver failed: {res.message}")
    return float(res.fun)


@dataclass(frozen=True)
class JkoConfig:
    tau: float
    sigma: float | None = None  # default 5 h^2
    inner: str = "lbfgs"
    inner_tol: float | None = None  # default 1e-10 |E[u0]|
    max_inner: int = 500

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.inner not in INNER_SOLVERS:
            raise ValueError(f"inner solver must be one of {INNER_SOLVERS}")

    def sigma_for(self, grid: PeriodicGrid) -> float:
        return 5.0 * grid.h**2 if self.sigma is None else self.sigma


class _Objective:
    """J(b) = sum_species S(b_prev, b) / (2 tau) + E[b / h] with warm-started potentials."""

    def __init__(self, prev: State, p: SystemParams, k: DiscreteKernel, tp: TransportProblem, tau: float):
        self.grid = prev.grid
        self.p = p
        self.k = k
        self.op = NonlocalOperator(k)
        self.tp = tp
        self.tau = tau
        self.cost = tp.cost
        self.prev = [_masses(prev.rho), _masses(prev.eta)]
        self.self_prev = [
            sinkhorn(a, a, self.cost, tp.sigma, tp.max_iters, tp.tol, symmetric=True).value
            for a in self.prev
        ]
        self.warm = [[None, None, None] for _ in range(2)]
        self.evals = 0

    def densities(self, b):
        return b[0] / self.grid.h, b[1] / self.grid.h

    def evaluate(self, b):
        """Objective, gradient w.r.t. masses, and per-species divergences."""
        self.evals += 1
        r, e = self.densities(b)
        s = State(Field(self.grid, r), Field(self.grid, e))
        energy = energy_nonlocal(s, self.p, self.k)
        mu = potentials_with_operator(r, e, self.p, self.op)
        divs, grads = [], []
        for sp in range(2):
            a, bb = self.prev[sp], b[sp]
            w = self.warm[sp]
            ab = sinkhorn(a, bb, self.cost, self.tp.sigma, self.tp.max_iters, self.tp.tol, w[0], w[1])
            sb = sinkhorn(bb, bb, self.cost, self.tp.sigma, self.tp.max_iters, self.tp.tol, w[2], w[2], symmetric=True)
            w[0], w[1], w[2] = ab.f, ab.g, sb.f
            divs.append(ab.value - 0.5 * (self.self_prev[sp] + sb.value))
            grads.append((ab.g - sb.f) / (2 * self.tau) + mu[sp])
        value = energy + sum(divs) / (2 * self.tau)
        return value, grads, divs, energy


@dataclass
class StepInfo:
    objective_start: float
    objective_end: float
    divergence: float  # sum over species of the debiased divergence to the previous state
    transport_cost: float  # sum over species of <C, plan>
    energy: float
    evaluations: int
    converged: bool


def _lbfgs(obj: _Objective, b0, jc: JkoConfig, tol: float):
    theta0 = np.concatenate([np.log(b0[0]), np.log(b0[1])])
    n = obj.grid.n

    def fun(theta):
        b = [softmax(theta[:n]), softmax(theta[n:])]
        val, grads, _, _ = obj.evaluate(b)
        gth = [bb * (gg - np.dot(gg, bb)) for bb, gg in zip(b, grads)]
        return val, np.concatenate(gth)

    res = optimize.minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": jc.max_inner, "ftol": tol, "gtol": 1e-14, "maxcor": 20},
    )
    b = [softmax(res.x[:n]), softmax(res.x[n:])]
    return b, bool(res.success)


def _mirror_descent(obj: _Objective, b0, jc: JkoConfig, tol: float):
    b = [x.copy() for x in b0]
    val, grads, _, _ = obj.evaluate(b)
    step = jc.tau
    converged = False
    for _ in range(jc.max_inner):
        while True:
            trial = []
            for bb, gg in zip(b, grads):
                z = np.log(bb) - step * (gg - np.dot(gg, bb))
                trial.append(softmax(z))
            tval, tgrads, _, _ = obj.evaluate(trial)
            dec = sum(float(np.dot(gg, bb - tb)) for gg, bb, tb in zip(grads, b, trial))
            if tval <= val - 0.25 * dec or step < 1e-16:
                break
            step *= 0.5
        gain = val - tval
        if tval <= val:
            b, val, grads = trial, tval, tgrads
        step *= 2.0
        if 0 <= gain < tol:
            converged = True
            break
    return b, converged


def jko_step(s: State, p: SystemParams, k: DiscreteKernel, jc: JkoConfig, inner_tol: float | None = None):
    """One minimizing-movement step; returns (new state, StepInfo)."""
    grid = s.grid
    k.grid.require_same(grid)
    tp = TransportProblem(grid, jc.sigma_for(grid))
    obj = _Objective(s, p, k, tp, jc.tau)
    b0 = [_masses(s.rho), _masses(s.eta)]
    b0 = [np.maximum(x, 1e-300) / np.maximum(x, 1e-300).sum() for x in b0]
    start_val, _, _, _ = obj.evaluate(b0)
    if inner_tol is None:
        inner_tol = jc.inner_tol if jc.inner_tol is not None else 1e-10 * max(abs(energy_nonlocal(s, p, k)), 1e-300)
    ftol = inner_tol / max(abs(start_val), 1.0)
    if jc.inner == "lbfgs":
        b, converged = _lbfgs(obj, b0, jc, ftol)
    else:
        b, converged = _mirror_descent(obj, b0, jc, inner_tol)
    end_val, _, divs, energy = obj.evaluate(b)
    if not end_val <= start_val:
        # never accept a worse point than the feasible start
        b, end_val = b0, start_val
        _, _, divs, energy = obj.evaluate(b)
    r, e = obj.densities(b)
    new = State(Field(grid, r), Field(grid, e), s.time + jc.tau)
    tc = sum(
        sinkhorn(a, bb, tp.cost, tp.sigma, tp.max_iters, tp.tol).cost for a, bb in zip(obj.prev, b)
    )
    return new, StepInfo(start_val, end_val, float(sum(divs)), float(tc), energy, obj.evals, converged)


@dataclass
class JkoTrajectory:
    states: list[State] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    entropies: list[float] = field(default_factory=list)
    steps: list[StepInfo] = field(default_factory=list)
    inner_tol: float = 0.0
    tau: float = 0.0

    def energy_estimate_defect(self) -> float:
        """E[u^N] + sum S/(2 tau) - E[u^0]; the estimate holds when this is <= N * inner_tol."""
        moved = sum(st.divergence for st in self.steps) / (2 * self.tau)
        return self.energies[-1] + moved - self.energies[0]


def jko_chain(s0: State, p: SystemParams, k: DiscreteKernel, jc: JkoConfig, n_steps: int) -> JkoTrajectory:
    e0 = energy_nonlocal(s0, p, k)
    tol = jc.inner_tol if jc.inner_tol is not None else 1e-10 * abs(e0)
    traj = JkoTrajectory(inner_tol=tol, tau=jc.tau)
    traj.states.append(s0)
    traj.energies.append(e0)
    traj.entropies.append(entropy(s0))
    s = s0
    for _ in range(n_steps):
        s, info = jko_step(s, p, k, jc, inner_tol=tol)
        traj.states.append(s)
        traj.energies.append(info.energy)
        traj.entropies.append(entropy(s))
        traj.steps.append(info)
    return traj


def holder_constant(p: SystemParams, delta: float = 0.1) -> float:
    """Additive constant making the energy nonnegative: minus the energy of the uniform state.

    The quadratic part is minimised by constants when Q A(k) - G is positive
    semidefinite for every nonzero mode; the certificate is reported with it.
    """
    cert = positivity_certificate(p, delta)
    c = 0.5 * p.gamma + 0.5 + p.beta
    return c if cert.admissible else float("nan")


def holder_check(traj: JkoTrajectory, p: SystemParams, tp: TransportProblem, delta: float = 0.1):
    """Worst ratio W(u_i, u_j) / (sqrt(2 (E0 + C)) sqrt(|t_i - t_j| + tau)) over recorded pairs."""
    c = holder_constant(p, delta)
    bound0 = math.sqrt(2.0 * max(traj.energies[0] + c, 0.0))
    worst = 0.0
    states = traj.states
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            w2 = 0.0
            for f, g in ((states[i].rho, states[j].rho), (states[i].eta, states[j].eta)):
                w2 += max(sinkhorn_divergence(_masses(f), _masses(g), tp), 0.0)
            lim = bound0 * math.sqrt(abs(states[j].time - states[i].time) + traj.tau)
            worst = max(worst, math.sqrt(w2) / lim if lim > 0 else math.inf)
    return worst


# heat-flow probe


@dataclass
class ProbeReport:
    name: str
    values: dict
    passed: bool
    note: str = ""


def heat_semigroup(values: np.ndarray, grid: PeriodicGrid, s: float) -> np.ndarray:
    return np.fft.ifftn(np.exp(-s * grid.laplacian_symbol) * np.fft.fftn(values)).real


def heat_flow_probe(
    s: State,
    p: SystemParams,
    k: DiscreteKernel,
    s_max: float = 1e-4,
    n_samples: int = 6,
    rtol: float = 0.01,
) -> ProbeReport:
    """Energy slope along the heat flow versus minus the entropy-dissipation integrand."""
    g = s.grid
    floor = 1e-10
    r = np.maximum(s.rho.values, floor)
    e = np.maximum(s.eta.values, floor)
    v0 = State(Field(g, r), Field(g, e))
    e0 = energy_nonlocal(v0, p, k)
    times = s_max * 2.0 ** -np.arange(n_samples)
    quots = []
    for t in times:
        vs = State(Field(g, heat_semigroup(r, g, t)), Field(g, heat_semigroup(e, g, t)))
        quots.append((energy_nonlocal(vs, p, k) - e0) / t)
    coeffs = np.polynomial.polynomial.polyfit(times, quots, n_samples - 1)
    slope = float(coeffs[0])
    analytic = -entropy_dissipation(v0, p, k)
    scale = max(abs(analytic), abs(slope))
    err = 0.0 if scale == 0 else abs(slope - analytic) / scale
    mass_drift = max(
        abs(integrate_array(heat_semigroup(r, g, s_max), g) - integrate_array(r, g)),
        abs(integrate_array(heat_semigroup(e, g, s_max), g) - integrate_array(e, g)),
    )
    return ProbeReport(
        "heat_flow",
        {
            "slope": slope,
            "analytic": analytic,
            "relative_error": err,
            "mass_drift": mass_drift,
            "s_max": s_max,
        },
        passed=(err <= rtol or scale < 1e-14),
    )


def flow_interchange_margins(traj: JkoTrajectory, p: SystemParams, k: DiscreteKernel) -> np.ndarray:
    """Per step: (U[u^{n-1}] - U[u^n]) - tau * D(u^n), with D the entropy-dissipation integrand."""
    out = []
    for n in range(1, len(traj.states)):
        diss = entropy_dissipation(traj.states[n], p, k)
        out.append(traj.entropies[n - 1] - traj.entropies[n] - traj.tau * diss)
    return np.array(out)
