"""Nonlocal operators: periodic convolution, B_eps, the pair-difference operator S_eps.

S_eps maps a field to samples over (x, y_j) for the kernel's grid offsets y_j.
Pair fields are evaluated lazily in chunks of offsets so that 2D kernels with
many offsets never need the full (offsets x grid) array in memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GridMismatch
from .mollifier import DiscreteKernel
from .torus import Field, PeriodicGrid, inner_array

PAIR_BUDGET_BYTES = 64 * 2**20


@dataclass(frozen=True, eq=False)
class ConvolutionPlan:
    grid: PeriodicGrid
    modal: np.ndarray

    @classmethod
    def from_kernel(cls, k: DiscreteKernel) -> "ConvolutionPlan":
        return cls(k.grid, k.modal)


@dataclass(frozen=True, eq=False)
class OffsetQuadrature:
    """Grid offsets y_j inside the kernel support with weights w_j = omega_eps(y_j) h^d."""

    grid: PeriodicGrid
    index_offsets: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_kernel(cls, k: DiscreteKernel) -> "OffsetQuadrature":
        return cls(k.grid, k.index_offsets, k.weights)

    @property
    def offsets(self) -> np.ndarray:
        return self.index_offsets * self.grid.h

    def __len__(self) -> int:
        return len(self.weights)

    def chunks(self, budget_bytes: int = PAIR_BUDGET_BYTES) -> Iterator[slice]:
        per_offset = 8 * self.grid.size
        step = max(1, budget_bytes // (4 * per_offset))
        for start in range(0, len(self), step):
            yield slice(start, min(start + step, len(self)))


def _gather_shifted(values: np.ndarray, grid: PeriodicGrid, idx: np.ndarray) -> np.ndarray:
    """Stack of x -> f(x - y_j) for integer offsets idx (shape (m, dim))."""
    reach = int(np.abs(idx).max()) if len(idx) else 0
    # windows of a periodically padded copy are the shifted fields
    padded = np.pad(values, reach, mode="wrap")
    windows = sliding_window_view(padded, grid.shape)
    return windows[tuple(reach - idx[:, a] for a in range(grid.dim))]


def _pair_coeff(weights: np.ndarray, grid: PeriodicGrid, eps: float) -> np.ndarray:
    # sqrt(omega_eps(y_j)) / (sqrt(2) eps), with omega_eps(y_j) = w_j / h^d
    return np.sqrt(weights / grid.cell_volume) / (np.sqrt(2.0) * eps)


def convolve_array(modal: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(modal * np.fft.fftn(values)).real


def convolve(plan: ConvolutionPlan, f: Field) -> Field:
    """Circular convolution omega_eps * f via FFT."""
    plan.grid.require_same(f.grid)
    return Field(f.grid, convolve_array(plan.modal, f.values))


def b_eps(k: DiscreteKernel, f: Field) -> Field:
    """B_eps f = (f - omega_eps * f) / eps^2."""
    k.grid.require_same(f.grid)
    return Field(f.grid, (f.values - convolve_array(k.modal, f.values)) / k.eps**2)


@dataclass(frozen=True, eq=False)
class PairField:
    """Lazy samples of S_eps f over (y_j, x)."""

    quadrature: OffsetQuadrature
    source: Field
    eps: float

    @property
    def grid(self) -> PeriodicGrid:
        return self.source.grid

    def block(self, sl: slice) -> np.ndarray:
        idx = self.quadrature.index_offsets[sl]
        coeff = _pair_coeff(self.quadrature.weights[sl], self.grid, self.eps)
        diff = _gather_shifted(self.source.values, self.grid, idx) - self.source.values[None]
        return coeff.reshape((-1,) + (1,) * self.grid.dim) * diff

    def blocks(self, budget_bytes: int = PAIR_BUDGET_BYTES) -> Iterator[np.ndarray]:
        for sl in self.quadrature.chunks(budget_bytes):
            yield self.block(sl)

    def to_array(self, budget_bytes: int = PAIR_BUDGET_BYTES) -> np.ndarray:
        need = 8 * len(self.quadrature) * self.grid.size
        if need > budget_bytes:
            raise MemoryError(f"pair field needs {need} bytes, budget is {budget_bytes}")
        return self.block(slice(None))

    def row(self, j: int) -> Field:
        return Field(self.grid, self.block(slice(j, j + 1))[0])


def s_eps(k: DiscreteKernel, f: Field, q: OffsetQuadrature | None = None) -> PairField:
    k.grid.require_same(f.grid)
    q = OffsetQuadrature.from_kernel(k) if q is None else q
    if q.grid != k.grid:
        raise GridMismatch("quadrature and kernel live on different grids")
    return PairField(q, f, k.eps)


def pair_inner(a: PairField, b: PairField) -> float:
    """Sum over offsets and cells with weight h^d each, accumulated in offset order."""
    a.grid.require_same(b.grid)
    if a.quadrature is not b.quadrature and not np.array_equal(
        a.quadrature.index_offsets, b.quadrature.index_offsets
    ):
        raise GridMismatch("pair fields use different offset sets")
    hd = a.grid.cell_volume
    total = 0.0
    for sl in a.quadrature.chunks():
        total += float(np.sum(a.block(sl) * b.block(sl)))
    return hd * hd * total


def pair_product_rule_defect(k: DiscreteKernel, f: Field, g: Field) -> float:
    """max |S[fg] - S[f] g - S[g] f - coeff * (D_y f)(D_y g)| over all (x, y_j)."""
    k.grid.require_same(f.grid)
    k.grid.require_same(g.grid)
    q = OffsetQuadrature.from_kernel(k)
    fv, gv = f.values, g.values
    fg = fv * gv
    worst = 0.0
    for sl in q.chunks():
        idx = q.index_offsets[sl]
        coeff = _pair_coeff(q.weights[sl], k.grid, k.eps).reshape((-1,) + (1,) * k.grid.dim)
        df = _gather_shifted(fv, k.grid, idx) - fv[None]
        dg = _gather_shifted(gv, k.grid, idx) - gv[None]
        dfg = _gather_shifted(fg, k.grid, idx) - fg[None]
        # S[fg] - S[f] g - S[g] f, with every S written as coeff * D_y
        lhs = coeff * dfg - (coeff * df) * gv[None] - (coeff * dg) * fv[None]
        worst = max(worst, float(np.max(np.abs(lhs - coeff * df * dg))))
    return worst


def symbol_probe(k: DiscreteKernel, mode: Sequence[int]) -> float:
    """Per-mode diffusion constant (1 - w_hat(2 pi k)) / (eps^2 |2 pi k|^2)."""
    mode = np.atleast_1d(np.asarray(mode, dtype=int))
    if mode.shape != (k.grid.dim,):
        raise ValueError(f"mode needs {k.grid.dim} components")
    if np.any(2 * np.abs(mode) >= k.grid.n):
        raise ValueError("mode must lie below the Nyquist index")
    if not np.any(mode):
        return 0.0
    q2 = float(np.sum((2.0 * np.pi * mode) ** 2))
    w_hat = k.modal[tuple(mode % k.grid.n)]
    return float((1.0 - w_hat) / (k.eps**2 * q2))


def ponce_array(k: DiscreteKernel, values: np.ndarray) -> float:
    """sum_j w_j / eps^2 * h^d sum_x |f(x) - f(x - y_j)|^2."""
    q = OffsetQuadrature.from_kernel(k)
    total = 0.0
    for sl in q.chunks():
        d = _gather_shifted(values, k.grid, q.index_offsets[sl]) - values[None]
        per = np.sum(d * d, axis=tuple(range(1, k.grid.dim + 1)))
        total += float(np.dot(q.weights[sl], per))
    return k.grid.cell_volume * total / k.eps**2


def ponce_functional(k: DiscreteKernel, f: Field | Sequence[Field]) -> float:
    """Graded Ponce functional; a sequence of fields (a gradient) sums over components."""
    if isinstance(f, Field):
        k.grid.require_same(f.grid)
        return ponce_array(k, f.values)
    return sum(ponce_functional(k, c) for c in f)


def ponce_spectral_array(k: DiscreteKernel, values: np.ndarray) -> float:
    """Same double sum via Parseval: 2 <B f, f>."""
    fh = np.fft.fftn(values)
    g = k.grid
    return float(2.0 * g.cell_volume * np.sum(k.b_symbol * np.abs(fh) ** 2) / g.size)


class LinearOperator:
    """Translation-invariant operator given by a real, even Fourier symbol."""

    def __init__(self, grid: PeriodicGrid, symbol: np.ndarray, name: str):
        self.grid = grid
        self.symbol = symbol
        self.name = name

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(self.symbol * np.fft.fftn(values)).real

    def quadratic(self, a: np.ndarray, b: np.ndarray) -> float:
        """<A a, b>"""
        return inner_array(self.apply(a), b, self.grid)


class NonlocalOperator(LinearOperator):
    """B_eps for a certified kernel, applied as (f - omega_eps * f) / eps^2."""

    def __init__(self, k: DiscreteKernel):
        super().__init__(k.grid, k.b_symbol, f"B_eps(eps={k.eps!r})")
        self.kernel = k

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - convolve_array(self.kernel.modal, values)) / self.kernel.eps**2


class LocalOperator(LinearOperator):
    """-c_eff times the spectral Laplacian."""

    def __init__(self, grid: PeriodicGrid, c_eff: float = 1.0):
        super().__init__(grid, c_eff * grid.laplacian_symbol, f"-{c_eff!r}*Laplacian")
        self.c_eff = c_eff
