"""Uniform periodic grids on the unit torus, scalar fields and discrete calculus.

Samples live at cell centres x_i = (i + 1/2) h along each axis, stored
row-major (axis 0 is x, axis 1 is y).  Derivatives default to spectral
differentiation; second-order centred differences are available for
cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GridMismatch

TOL_NEG = 1e-12


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid with ``n`` points per axis on the unit torus of dimension ``dim``."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def axis_coords(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    def coords(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinate arrays broadcast to the grid shape."""
        return tuple(np.meshgrid(*([self.axis_coords] * self.dim), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers 2*pi*k per axis, shaped for broadcasting."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n)
        out = []
        for axis in range(self.dim):
            shape = [1] * self.dim
            shape[axis] = self.n
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def wavenumbers_no_nyquist(self) -> tuple[np.ndarray, ...]:
        # first derivatives of real data must drop the unpaired Nyquist mode
        out = []
        for q in self.wavenumbers:
            q = q.copy()
            q.flat[self.n // 2] = 0.0
            out.append(q)
        return tuple(out)

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """|2 pi k|^2 on the full modal grid."""
        return sum(q**2 for q in self.wavenumbers) * np.ones(self.shape)

    @cached_property
    def difference_symbol(self) -> np.ndarray:
        """Symbol of minus the 5-point (or 3-point) discrete Laplacian."""
        s = np.zeros(self.shape)
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        lam = (2.0 * np.sin(np.pi * k / self.n) / self.h) ** 2
        for axis in range(self.dim):
            shape = [1] * self.dim
            shape[axis] = self.n
            s = s + lam.reshape(shape)
        return s

    def require_same(self, other: "PeriodicGrid") -> None:
        if self != other:
            raise GridMismatch(f"grid mismatch: {self} vs {other}")


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable samples of a scalar function on a periodic grid."""

    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.size == self.grid.size and v.shape != self.grid.shape:
            v = v.reshape(self.grid.shape)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field samples must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn) -> "Field":
        return cls(grid, fn(*grid.coords()))

    @classmethod
    def constant(cls, grid: PeriodicGrid, c: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(c)))

    def _coerce(self, other):
        if isinstance(other, Field):
            self.grid.require_same(other.grid)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return Field(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._coerce(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def mirrored(self) -> "Field":
        """x -> -x on the torus; with cell-centred samples this is index i -> n-1-i."""
        return Field(self.grid, np.flip(self.values))


@dataclass(frozen=True)
class State:
    rho: Field
    eta: Field
    time: float = 0.0

    def __post_init__(self):
        self.rho.grid.require_same(self.eta.grid)

    @property
    def grid(self) -> PeriodicGrid:
        return self.rho.grid

    def swapped(self) -> "State":
        return State(self.eta, self.rho, self.time)

    def mirrored(self) -> "State":
        return State(self.rho.mirrored(), self.eta.mirrored(), self.time)


class Norms(NamedTuple):
    L1: float
    L2: float
    H1_seminorm: float
    H1: float


# array-level kernels; Field wrappers below


def integrate_array(values: np.ndarray, grid: PeriodicGrid) -> float:
    return float(grid.cell_volume * np.sum(values))


def inner_array(a: np.ndarray, b: np.ndarray, grid: PeriodicGrid) -> float:
    return float(grid.cell_volume * np.sum(a * b))


def spectral_gradient_array(values: np.ndarray, grid: PeriodicGrid) -> tuple[np.ndarray, ...]:
    fh = np.fft.fftn(values)
    return tuple(np.fft.ifftn(1j * q * fh).real for q in grid.wavenumbers_no_nyquist)


def spectral_laplacian_array(values: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    return np.fft.ifftn(-grid.laplacian_symbol * np.fft.fftn(values)).real


def centered_gradient_array(values: np.ndarray, grid: PeriodicGrid) -> tuple[np.ndarray, ...]:
    return tuple(
        (np.roll(values, -1, axis=a) - np.roll(values, 1, axis=a)) / (2.0 * grid.h)
        for a in range(grid.dim)
    )


def centered_laplacian_array(values: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    out = -2.0 * grid.dim * values
    for a in range(grid.dim):
        out = out + np.roll(values, -1, axis=a) + np.roll(values, 1, axis=a)
    return out / grid.h**2


def _check_method(method: str) -> None:
    if method not in ("spectral", "centered"):
        raise ValueError(f"unknown differentiation method {method!r}")


def integrate(f: Field) -> float:
    """Midpoint rule on the unit torus."""
    return integrate_array(f.values, f.grid)


def inner(f: Field, g: Field) -> float:
    f.grid.require_same(g.grid)
    return inner_array(f.values, g.values, f.grid)


def gradient(f: Field, method: str = "spectral") -> tuple[Field, ...]:
    _check_method(method)
    op = spectral_gradient_array if method == "spectral" else centered_gradient_array
    return tuple(Field(f.grid, c) for c in op(f.values, f.grid))


def divergence(components: Sequence[Field], method: str = "spectral") -> Field:
    _check_method(method)
    grid = components[0].grid
    if len(components) != grid.dim:
        raise ValueError("divergence needs one component per axis")
    total = np.zeros(grid.shape)
    for axis, c in enumerate(components):
        grid.require_same(c.grid)
        if method == "spectral":
            q = grid.wavenumbers_no_nyquist[axis]
            total += np.fft.ifftn(1j * q * np.fft.fftn(c.values)).real
        else:
            total += (np.roll(c.values, -1, axis=axis) - np.roll(c.values, 1, axis=axis)) / (
                2.0 * grid.h
            )
    return Field(grid, total)


def laplacian(f: Field, method: str = "spectral") -> Field:
    _check_method(method)
    op = spectral_laplacian_array if method == "spectral" else centered_laplacian_array
    return Field(f.grid, op(f.values, f.grid))


def shift_array(values: np.ndarray, grid: PeriodicGrid, offset: Sequence[float]) -> np.ndarray:
    offset = np.atleast_1d(np.asarray(offset, dtype=float))
    if offset.shape != (grid.dim,):
        raise ValueError(f"offset must have {grid.dim} components")
    steps = offset * grid.n
    if np.allclose(steps, np.round(steps), rtol=0.0, atol=1e-9):
        # grid-aligned: exact circular index shift
        return np.roll(values, tuple(int(s) for s in np.round(steps)), axis=tuple(range(grid.dim)))
    phase = sum(q * s for q, s in zip(grid.wavenumbers, offset))
    return np.fft.ifftn(np.fft.fftn(values) * np.exp(-1j * phase)).real


def shift_sample(f: Field, offset: Sequence[float]) -> Field:
    """Return x -> f(x - offset) by trigonometric interpolation."""
    return Field(f.grid, shift_array(f.values, f.grid, offset))


def norms(f: Field) -> Norms:
    g = f.grid
    l1 = integrate_array(np.abs(f.values), g)
    l2sq = inner_array(f.values, f.values, g)
    semi_sq = sum(inner_array(c, c, g) for c in spectral_gradient_array(f.values, g))
    return Norms(l1, np.sqrt(l2sq), np.sqrt(semi_sq), np.sqrt(l2sq + semi_sq))


def modal_l2(f: Field) -> float:
    """L2 norm evaluated from the discrete Fourier coefficients."""
    fh = np.fft.fftn(f.values)
    return float(np.sqrt(f.grid.cell_volume * np.sum(np.abs(fh) ** 2) / f.grid.size))


def resample(f: Field, n_new: int) -> Field:
    """Trigonometric resampling onto a grid with n_new points per axis.

    The modal coefficients are defined relative to the cell-centred origin
    h/2, hence the half-cell phase corrections on the way in and out.
    """
    g_old = f.grid
    g_new = PeriodicGrid(g_old.dim, n_new)
    if n_new == g_old.n:
        return f
    fh = np.fft.fftn(f.values) / g_old.size
    for q in g_old.wavenumbers:
        fh = fh * np.exp(-1j * q * g_old.h / 2)
    m = min(g_old.n, n_new)
    out = np.zeros(g_new.shape, dtype=complex)
    kk = np.fft.fftfreq(m, d=1.0 / m).astype(int)
    kk = kk[np.abs(kk) < m // 2]
    idx_old = np.ix_(*([kk % g_old.n] * g_old.dim))
    idx_new = np.ix_(*([kk % n_new] * g_old.dim))
    out[idx_new] = fh[idx_old]
    for q in g_new.wavenumbers:
        out = out * np.exp(1j * q * g_new.h / 2)
    return Field(g_new, np.fft.ifftn(out * g_new.size).real)


def random_band_limited(
    grid: PeriodicGrid,
    rng: np.random.Generator,
    kmax: int = 4,
    amplitude: float = 1.0,
    mean: float = 0.0,
) -> Field:
    """Random real trigonometric polynomial with modes |k_a| <= kmax."""
    if 2 * kmax >= grid.n:
        raise ValueError("kmax must be below the Nyquist index")
    coords = grid.coords()
    total = np.full(grid.shape, float(mean))
    ks = range(-kmax, kmax + 1)
    modes = [(k,) for k in ks] if grid.dim == 1 else [(k1, k2) for k1 in ks for k2 in ks]
    for k in modes:
        if k <= tuple([0] * grid.dim):
            continue
        a, b = rng.normal(size=2) * amplitude / (1.0 + sum(abs(c) for c in k))
        phase = 2.0 * np.pi * sum(kc * x for kc, x in zip(k, coords))
        total = total + a * np.cos(phase) + b * np.sin(phase)
    return Field(grid, total)


def normalize_density(values: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Floor at zero and rescale to unit mass."""
    v = np.maximum(np.asarray(values, dtype=float), 0.0)
    mass = integrate_array(v, grid)
    if mass <= 0.0:
        raise ValueError("density has zero mass after flooring")
    return v / mass


def normalized_state(rho, eta, grid: PeriodicGrid, time: float = 0.0) -> State:
    rv = rho.values if isinstance(rho, Field) else rho
    ev = eta.values if isinstance(eta, Field) else eta
    return State(
        Field(grid, normalize_density(rv, grid)), Field(grid, normalize_density(ev, grid)), time
    )


SNAPSHOT_MAGIC = "CHS-FIELD v1"


def write_snapshot(path: str | Path, f: Field, name: str, time: float) -> None:
    if any(c.isspace() for c in name):
        raise ValueError("snapshot name must not contain whitespace")
    header = f"{SNAPSHOT_MAGIC} dim={f.grid.dim} n={f.grid.n} name={name} time={time!r}"
    body = "\n".join(format(v, ".17g") for v in f.values.ravel(order="C"))
    Path(path).write_text(header + "\n" + body + "\n", encoding="utf-8")


def read_snapshot(path: str | Path) -> tuple[Field, str, float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(SNAPSHOT_MAGIC):
        raise ValueError(f"{path}: not a field snapshot")
    meta = dict(tok.split("=", 1) for tok in lines[0][len(SNAPSHOT_MAGIC):].split())
    grid = PeriodicGrid(int(meta["dim"]), int(meta["n"]))
    data = np.array([float(s) for s in lines[1:] if s.strip()])
    if data.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} samples, found {data.size}")
    return Field(grid, data.reshape(grid.shape)), meta["name"], float(meta["time"])
