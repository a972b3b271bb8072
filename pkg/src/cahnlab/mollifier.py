"""Radial mollifiers with certified discrete moments.

A profile p(r) on [0, 1] defines omega(z) = c * p(|z| / a).  The radius factor
``a`` is solved for so that the *discrete* per-axis second moment equals the
requested target exactly, and the discrete mass is renormalised to one.  A
nonnegative unit-mass profile confined to the unit ball has trace(m2) <= 1, so
both targets need a > 1; when a*eps exceeds half the period the kernel is
periodised (summed over wrapped offsets), which is exact for B on the torus.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

from .errors import EpsTooLarge, EpsTooSmall
from .torus import Field, PeriodicGrid


class Profile(str, Enum):
    POLYNOMIAL_BUMP = "polynomial_bump"
    WENDLAND_C2 = "wendland_c2"


class MomentTarget(str, Enum):
    PAPER = "paper"
    LAPLACIAN_CONSISTENT = "laplacian_consistent"


def profile_values(profile: Profile, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    inside = r < 1.0
    if profile is Profile.POLYNOMIAL_BUMP:
        v = (1.0 - r**2) ** 3
    elif profile is Profile.WENDLAND_C2:
        v = (1.0 - r) ** 4 * (4.0 * r + 1.0)
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return np.where(inside, v, 0.0)


@dataclass(frozen=True)
class MollifierSpec:
    profile: Profile = Profile.POLYNOMIAL_BUMP
    second_moment_target: MomentTarget = MomentTarget.LAPLACIAN_CONSISTENT

    def __post_init__(self):
        object.__setattr__(self, "profile", Profile(self.profile))
        object.__setattr__(self, "second_moment_target", MomentTarget(self.second_moment_target))

    def target(self, dim: int) -> float:
        """Per-axis second moment of the unit-scale kernel."""
        if self.second_moment_target is MomentTarget.PAPER:
            return 2.0 / dim
        return 2.0

    def c_eff(self, dim: int) -> float:
        """Diffusion constant of the local limit: B_eps -> -c_eff * Laplacian."""
        return self.target(dim) / 2.0

    def unit_axis_moment(self, dim: int) -> float:
        """Per-axis second moment of the normalised profile on the unit ball."""
        p = lambda r: float(profile_values(self.profile, np.array(r)))
        num = integrate.quad(lambda r: r ** (dim + 1) * p(r), 0.0, 1.0, epsabs=1e-15)[0]
        den = integrate.quad(lambda r: r ** (dim - 1) * p(r), 0.0, 1.0, epsabs=1e-15)[0]
        return num / den / dim

    def density(self, z: np.ndarray, radius_factor: float, dim: int) -> np.ndarray:
        """Continuous unit-scale kernel omega(z) for z of shape (..., dim)."""
        z = np.asarray(z, dtype=float)
        p = lambda r: float(profile_values(self.profile, np.array(r)))
        den = integrate.quad(lambda r: r ** (dim - 1) * p(r), 0.0, 1.0, epsabs=1e-15)[0]
        sphere = 2.0 if dim == 1 else 2.0 * np.pi
        mass = sphere * den * radius_factor**dim
        return profile_values(self.profile, np.linalg.norm(z, axis=-1) / radius_factor) / mass


@dataclass(frozen=True)
class Moments:
    m0: float
    m1: np.ndarray
    m2: np.ndarray


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Tabulated omega_eps.

    ``weights[j]`` is the quadrature weight omega_eps(y_j) h^d attached to the
    grid offset ``offsets[j]`` (unwrapped, inside the support ball).
    ``values`` is the periodised density indexed by offset: entry i holds
    omega_eps at y = i h modulo 1.
    """

    grid: PeriodicGrid
    eps: float
    spec: MollifierSpec
    radius_factor: float
    index_offsets: np.ndarray
    weights: np.ndarray
    values: Field
    moments: Moments

    @property
    def offsets(self) -> np.ndarray:
        return self.index_offsets * self.grid.h

    @property
    def support_radius(self) -> float:
        return self.radius_factor * self.eps

    @property
    def c_eff(self) -> float:
        return self.spec.c_eff(self.grid.dim)

    @property
    def wraps(self) -> bool:
        return self.support_radius >= 0.5

    @cached_property
    def modal(self) -> np.ndarray:
        """Discrete Fourier coefficients of the periodised weights (real by symmetry)."""
        return np.fft.fftn(self.values.values * self.grid.cell_volume).real

    @cached_property
    def b_symbol(self) -> np.ndarray:
        """Per-mode eigenvalue of B_eps: (1 - w_hat) / eps^2."""
        sym = (1.0 - self.modal) / self.eps**2
        sym[(0,) * self.grid.dim] = 0.0  # unit mass: constants are annihilated exactly
        return sym


def _enumerate_offsets(grid: PeriodicGrid, reach: float) -> np.ndarray:
    m = int(np.floor(reach / grid.h))
    r = np.arange(-m, m + 1)
    if grid.dim == 1:
        return r[:, None]
    j1, j2 = np.meshgrid(r, r, indexing="ij")
    idx = np.stack([j1.ravel(), j2.ravel()], axis=1)
    return idx[np.einsum("ij,ij->i", idx, idx) * grid.h**2 <= reach**2]


def _raw_weights(spec, grid, eps, a, idx):
    r = np.sqrt(np.sum((idx * grid.h) ** 2, axis=1)) / (a * eps)
    v = profile_values(spec.profile, r)
    return v / v.sum()


def build_kernel(spec: MollifierSpec, eps: float, grid: PeriodicGrid) -> DiscreteKernel:
    eps = float(eps)
    if eps <= 2.0 * grid.h:
        raise EpsTooSmall(f"eps={eps} must exceed 2h={2.0 * grid.h}")
    if eps >= 0.5:
        raise EpsTooLarge(f"eps={eps} must be below 0.5")
    target = spec.target(grid.dim)
    a0 = np.sqrt(target / spec.unit_axis_moment(grid.dim))
    lo, hi = 0.7 * a0, 1.4 * a0
    # offsets beyond a*eps carry zero weight, so one enumeration serves the whole bracket
    idx_all = _enumerate_offsets(grid, hi * eps)
    y_axis = idx_all[:, 0] * grid.h / eps

    def defect(a):
        w = _raw_weights(spec, grid, eps, a, idx_all)
        return float(np.sum(w * y_axis * y_axis)) - target

    a = optimize.brentq(defect, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    w = _raw_weights(spec, grid, eps, a, idx_all)
    keep = w > 0.0
    idx, w = idx_all[keep], w[keep]

    table = np.zeros(grid.shape)
    np.add.at(table, tuple((idx % grid.n).T), w / grid.cell_volume)

    y = idx * grid.h / eps
    moments = Moments(
        m0=float(w.sum()),
        m1=(w[:, None] * y).sum(axis=0),
        m2=np.einsum("j,ja,jb->ab", w, y, y),
    )
    return DiscreteKernel(grid, eps, spec, float(a), idx, w, Field(grid, table), moments)


@dataclass(frozen=True)
class MomentReport:
    eps: float
    target: float
    m0: float
    m1_max_abs: float
    m2: np.ndarray
    m2_offdiag_max_abs: float
    support_radius: float
    negative_mass: float
    wraps: bool

    @property
    def m2_diag(self) -> tuple[float, ...]:
        return tuple(float(v) for v in np.diag(self.m2))

    def csv_header(self) -> list[str]:
        diag = [f"m2_diag_{a}" for a in range(len(self.m2_diag))]
        return ["eps", "m0", "m1_max_abs", *diag, "m2_offdiag_max_abs", "support_radius"]

    def csv_row(self) -> list[float]:
        return [
            self.eps,
            self.m0,
            self.m1_max_abs,
            *self.m2_diag,
            self.m2_offdiag_max_abs,
            self.support_radius,
        ]


def kernel_report(k: DiscreteKernel) -> MomentReport:
    m2 = k.moments.m2
    off = m2 - np.diag(np.diag(m2))
    return MomentReport(
        eps=k.eps,
        target=k.spec.target(k.grid.dim),
        m0=k.moments.m0,
        m1_max_abs=float(np.max(np.abs(k.moments.m1))),
        m2=m2,
        m2_offdiag_max_abs=float(np.max(np.abs(off))),
        support_radius=k.support_radius,
        negative_mass=float(-np.sum(np.minimum(k.weights, 0.0))),
        wraps=k.wraps,
    )
