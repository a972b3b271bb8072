"""Energies, entropy, chemical potentials, dissipation and parameter certificates.

Quadratic parts are written with a generic self-adjoint operator A:

    E[rho, eta] = kappa/2 <A rho, rho> + 1/2 <A eta, eta> + alpha <A rho, eta>
                  - int (gamma/2 rho^2 + 1/2 eta^2 + beta rho eta)

A = B_eps for the nonlocal system and A = -c_eff Laplacian for the local one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import _fv
from .mollifier import DiscreteKernel
from .operators import (
    LinearOperator,
    LocalOperator,
    NonlocalOperator,
    OffsetQuadrature,
    _gather_shifted,
    convolve_array,
    ponce_spectral_array,
)
from .torus import (
    Field,
    PeriodicGrid,
    State,
    inner_array,
    integrate_array,
    spectral_gradient_array,
)

ENTROPY_FLOOR = 1e-300


@dataclass(frozen=True)
class TildeCoefficients:
    kappa_t: float
    alpha_t: float
    c_t: float


@dataclass(frozen=True)
class SystemParams:
    kappa: float
    alpha: float
    beta: float
    gamma: float
    eps: float | None = None

    def validate(self, theory_mode: bool = False) -> "SystemParams":
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.eps is not None and not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if theory_mode and not self.kappa > self.alpha**2:
            raise ValueError(f"theory mode needs kappa > alpha^2 ({self.kappa} vs {self.alpha**2})")
        return self

    def with_eps(self, eps: float | None) -> "SystemParams":
        return replace(self, eps=eps)

    @property
    def tilde(self) -> TildeCoefficients:
        if self.eps is None:
            raise ValueError("tilde coefficients need eps")
        e2 = self.eps**2
        return TildeCoefficients(self.kappa / e2 - self.gamma, self.alpha / e2 - self.beta, 1 / e2 - 1)


def _check_eps(p: SystemParams, k: DiscreteKernel) -> None:
    if p.eps is not None and not math.isclose(p.eps, k.eps, rel_tol=1e-12):
        raise ValueError(f"params eps={p.eps} disagrees with kernel eps={k.eps}")


def _local_terms(r: np.ndarray, e: np.ndarray, p: SystemParams, grid: PeriodicGrid) -> float:
    return integrate_array(0.5 * p.gamma * r * r + 0.5 * e * e + p.beta * r * e, grid)


# energies


def energy_with_operator(r: np.ndarray, e: np.ndarray, p: SystemParams, op: LinearOperator) -> float:
    g = op.grid
    ar, ae = op.apply(r), op.apply(e)
    quad = 0.5 * p.kappa * inner_array(ar, r, g) + 0.5 * inner_array(ae, e, g)
    quad += p.alpha * inner_array(ar, e, g)
    return quad - _local_terms(r, e, p, g)


def energy_nonlocal(s: State, p: SystemParams, k: DiscreteKernel, method: str = "convolution") -> float:
    """Nonlocal energy; ``method`` selects the convolution or the offset double-sum form."""
    k.grid.require_same(s.grid)
    _check_eps(p, k)
    r, e, g = s.rho.values, s.eta.values, k.grid
    if method == "convolution":
        t = p.with_eps(k.eps).tilde
        wr, we = convolve_array(k.modal, r), convolve_array(k.modal, e)
        val = integrate_array(0.5 * t.kappa_t * r * r + 0.5 * t.c_t * e * e + t.alpha_t * r * e, g)
        val -= 0.5 * (t.kappa_t + p.gamma) * inner_array(wr, r, g)
        val -= 0.5 * (t.c_t + 1.0) * inner_array(we, e, g)
        val -= (t.alpha_t + p.beta) * inner_array(we, r, g)
        return float(val)
    if method == "offsets":
        prr, pee, pre = _pair_sums(k, [r], [e])
        val = 0.25 * (p.kappa * prr + pee) + 0.5 * p.alpha * pre
        return float(val - _local_terms(r, e, p, g))
    raise ValueError(f"unknown method {method!r}")


def energy_local(s: State, p: SystemParams, c_eff: float = 1.0) -> float:
    g = s.grid
    r, e = s.rho.values, s.eta.values
    gr, ge = spectral_gradient_array(r, g), spectral_gradient_array(e, g)
    dens = sum(0.5 * p.kappa * a * a + 0.5 * b * b + p.alpha * a * b for a, b in zip(gr, ge))
    return float(c_eff * integrate_array(dens, g) - _local_terms(r, e, p, g))


def entropy_array(r: np.ndarray, e: np.ndarray, grid: PeriodicGrid) -> float:
    def phi(x):
        safe = np.maximum(x, ENTROPY_FLOOR)
        return np.where(x > 0.0, x * (np.log(safe) - 1.0), 0.0)

    return integrate_array(phi(r) + phi(e), grid)


def entropy(s: State) -> float:
    return entropy_array(s.rho.values, s.eta.values, s.grid)


# chemical potentials


def potentials_with_operator(r, e, p: SystemParams, op: LinearOperator):
    ar, ae = op.apply(r), op.apply(e)
    mu_r = p.kappa * ar + p.alpha * ae - p.gamma * r - p.beta * e
    mu_e = p.alpha * ar + ae - p.beta * r - e
    return mu_r, mu_e


def chemical_potentials(s: State, p: SystemParams, k: DiscreteKernel) -> tuple[Field, Field]:
    k.grid.require_same(s.grid)
    _check_eps(p, k)
    mu_r, mu_e = potentials_with_operator(s.rho.values, s.eta.values, p, NonlocalOperator(k))
    return Field(s.grid, mu_r), Field(s.grid, mu_e)


def chemical_potentials_local(s: State, p: SystemParams, c_eff: float = 1.0) -> tuple[Field, Field]:
    op = LocalOperator(s.grid, c_eff)
    mu_r, mu_e = potentials_with_operator(s.rho.values, s.eta.values, p, op)
    return Field(s.grid, mu_r), Field(s.grid, mu_e)


# dissipation


def _pair_sums(k: DiscreteKernel, fs: list[np.ndarray], gs: list[np.ndarray]):
    """Offset sums of w_j/eps^2 h^d sum_x over |D f|^2, |D g|^2 and D f . D g (components summed)."""
    q = OffsetQuadrature.from_kernel(k)
    ff = gg = fg = 0.0
    axes = tuple(range(1, k.grid.dim + 1))
    for sl in q.chunks():
        idx, w = q.index_offsets[sl], q.weights[sl]
        a_ff = a_gg = a_fg = 0.0
        for f, g in zip(fs, gs):
            df = _gather_shifted(f, k.grid, idx) - f[None]
            dg = _gather_shifted(g, k.grid, idx) - g[None]
            a_ff = a_ff + np.sum(df * df, axis=axes)
            a_gg = a_gg + np.sum(dg * dg, axis=axes)
            a_fg = a_fg + np.sum(df * dg, axis=axes)
        ff += float(np.dot(w, a_ff))
        gg += float(np.dot(w, a_gg))
        fg += float(np.dot(w, a_fg))
    scale = k.grid.cell_volume / k.eps**2
    return ff * scale, gg * scale, fg * scale


def _local_gradient_terms(gr, ge, p: SystemParams, grid) -> float:
    dens = sum(p.gamma * a * a + b * b + 2.0 * p.beta * a * b for a, b in zip(gr, ge))
    return integrate_array(dens, grid)


def entropy_dissipation_with_operator(r, e, p: SystemParams, op: LinearOperator) -> float:
    """kappa <A grad rho, grad rho> + <A grad eta, grad eta> + 2 alpha <A grad rho, grad eta> - local terms."""
    g = op.grid
    gr, ge = spectral_gradient_array(r, g), spectral_gradient_array(e, g)
    val = 0.0
    for a, b in zip(gr, ge):
        aa, ab = op.apply(a), op.apply(b)
        val += p.kappa * inner_array(aa, a, g) + inner_array(ab, b, g) + 2 * p.alpha * inner_array(aa, b, g)
    return float(val - _local_gradient_terms(gr, ge, p, g))


def entropy_dissipation(s: State, p: SystemParams, k: DiscreteKernel, method: str = "offsets") -> float:
    """Instantaneous entropy-dissipation integrand with pair terms over the offset quadrature."""
    k.grid.require_same(s.grid)
    _check_eps(p, k)
    if method == "spectral":
        return entropy_dissipation_with_operator(s.rho.values, s.eta.values, p, NonlocalOperator(k))
    if method != "offsets":
        raise ValueError(f"unknown method {method!r}")
    g = s.grid
    gr = spectral_gradient_array(s.rho.values, g)
    ge = spectral_gradient_array(s.eta.values, g)
    prr, pee, pre = _pair_sums(k, list(gr), list(ge))
    val = 0.5 * (p.kappa * prr + pee) + p.alpha * pre
    return float(val - _local_gradient_terms(gr, ge, p, g))


def energy_dissipation_flux(
    s: State, p: SystemParams, op: LinearOperator, upwind: str = "full_upwind"
) -> float:
    """Face-based h^d sum m_face |D mu|^2 for both species, as used by the finite-volume scheme."""
    g = s.grid
    r, e = s.rho.values, s.eta.values
    total = 0.0
    for m, mu in zip((r, e), potentials_with_operator(r, e, p, op)):
        vel = _fv.face_velocities(mu, g.h)
        for mf, v in zip(_fv.face_mobilities(m, vel, upwind), vel):
            total += float(np.sum(mf * v * v))
    return g.cell_volume * total


# certificates


@dataclass(frozen=True)
class Certificate:
    admissible: bool
    value: float
    detail: str = ""


def positivity_certificate(p: SystemParams, delta: float) -> Certificate:
    """Checks the matrix (kappa - delta, alpha; alpha, 1 - delta); ``value`` is its smallest eigenvalue."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    m = np.array([[p.kappa - delta, p.alpha], [p.alpha, 1.0 - delta]])
    lam = float(np.linalg.eigvalsh(m)[0])
    det = (p.kappa - delta) * (1.0 - delta) - p.alpha**2
    ok = p.kappa - delta > 0 and det > 0
    return Certificate(ok, lam, f"det={det!r}")


def _sylvester(p: SystemParams, eps: float) -> tuple[bool, float, float]:
    t = p.with_eps(eps).tilde
    minor = t.kappa_t * t.c_t - t.alpha_t**2
    return (t.kappa_t > 0 and minor > 0), t.kappa_t, minor


def convexity_eps_max(p: SystemParams, tol: float = 1e-6) -> float:
    """Largest eps0 such that both Sylvester conditions hold on (0, eps0); 0 if none."""
    hi = min(math.sqrt(p.kappa / p.gamma), 1.0)
    grid = hi * np.geomspace(1e-4, 1.0, 4000)
    ok = [_sylvester(p, e)[0] for e in grid]
    if not ok[0]:
        return 0.0
    first_bad = next((i for i, v in enumerate(ok) if not v), None)
    if first_bad is None:
        return hi
    lo, hi = grid[first_bad - 1], grid[first_bad]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _sylvester(p, mid)[0]:
            lo = mid
        else:
            hi = mid
    return float(lo)


def convexity_certificate(p: SystemParams) -> Certificate:
    """Sylvester test on the tilde coefficients at p.eps; ``value`` is the largest admissible eps."""
    if p.eps is None or not p.eps > 0:
        raise ValueError("convexity certificate needs eps > 0")
    ok, kt, minor = _sylvester(p, p.eps)
    return Certificate(ok, convexity_eps_max(p), f"kappa_t={kt!r} minor={minor!r}")


# diagnostics


@dataclass(frozen=True)
class Diagnostics:
    time: float
    mass_rho: float
    mass_eta: float
    min_rho: float
    min_eta: float
    energy_nonlocal: float
    energy_local: float
    entropy: float
    entropy_dissipation: float
    energy_dissipation_flux: float
    ponce_rho: float
    ponce_eta: float

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[float]:
        return [getattr(self, f.name) for f in fields(self)]


def compute_diagnostics(
    s: State,
    p: SystemParams,
    op: LinearOperator,
    kernel: DiscreteKernel | None = None,
    c_eff: float = 1.0,
    upwind: str = "full_upwind",
) -> Diagnostics:
    """Diagnostics of a state; nonlocal entries are NaN when no kernel is supplied.

    ``op`` is the operator that drives the dynamics and enters the
    dissipation entries.
    """
    g = s.grid
    r, e = s.rho.values, s.eta.values
    nan = float("nan")
    if kernel is not None:
        e_nl = energy_nonlocal(s, p.with_eps(kernel.eps), kernel)
        p_r, p_e = ponce_spectral_array(kernel, r), ponce_spectral_array(kernel, e)
    else:
        e_nl = p_r = p_e = nan
    return Diagnostics(
        time=float(s.time),
        mass_rho=integrate_array(r, g),
        mass_eta=integrate_array(e, g),
        min_rho=float(r.min()),
        min_eta=float(e.min()),
        energy_nonlocal=e_nl,
        energy_local=energy_local(s, p, c_eff),
        entropy=entropy_array(r, e, g),
        entropy_dissipation=entropy_dissipation_with_operator(r, e, p, op),
        energy_dissipation_flux=energy_dissipation_flux(s, p, op, upwind),
        ponce_rho=p_r,
        ponce_eta=p_e,
    )
