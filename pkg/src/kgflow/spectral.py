"""Periodic-box spectral core: grid, fields, multipliers, free Klein-Gordon flow.

The domain is the box [-L/2, L/2)^d with periodic boundary conditions.  Every
linear operator used by the package is an exact Fourier multiplier on the
lattice xi = 2*pi*k/L, k integer with each component in [-n/2, n/2).  The box
stands in for R^d at desk scale: by finite speed of propagation, wraparound
stays below truncation tolerance as long as L >= 2*(data support radius + T)
for a run of length T.

Conventions
-----------
* Physical samples are stored in C order on the tensor grid
  x_i = -L/2 + i*L/n per axis.
* Spectral coefficients are the unnormalized numpy/scipy DFT of the samples
  (``ifftn(coeffs)`` recovers the samples).
* The Nyquist plane (axis index n/2) is zeroed when fields are constructed
  and after every multiplier application; an odd symbol would otherwise break
  conjugate symmetry of real fields.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft as _sfft

#: FFT worker threads (deterministic for a fixed value; override via env)
FFT_WORKERS = int(os.environ.get("KGFLOW_FFT_WORKERS", min(os.cpu_count() or 1, 4)))


def fftn(a):
    return _sfft.fftn(a, workers=FFT_WORKERS)


def ifftn(a):
    return _sfft.ifftn(a, workers=FFT_WORKERS)


from .errors import GridMismatchError, SnapshotFormatError, ZeroModeSingularity

SNAPSHOT_MAGIC = b"KGF1"
_HEADER = struct.Struct("<4sIIdII")

#: default relative tolerance for a "nonzero" zero mode under a singular symbol
ZERO_MODE_TOL = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid and its Fourier lattice.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 <= dim <= 5.
    n_per_axis : int
        Even number of points per axis, >= 8.
    box_length : float
        Side length L of the periodic box [-L/2, L/2)^d.
    mass : float
        Either 1.0 (Klein-Gordon dispersion, omega = sqrt(1+|xi|^2)) or 0.0
        (massless wave dispersion, omega = |xi|; used only by the scaling
        symmetry checks).
    max_points : int
        Soft memory budget on the total point count n^d.
    """

    dim: int
    n_per_axis: int
    box_length: float
    mass: float = 1.0
    max_points: int = 8_000_000

    def __post_init__(self):
        if not 1 <= self.dim <= 5:
            raise ValueError(f"dim must be in 1..5, got {self.dim}")
        if self.n_per_axis < 8 or self.n_per_axis % 2:
            raise ValueError(f"n_per_axis must be even and >= 8, got {self.n_per_axis}")
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")
        if self.mass not in (0.0, 1.0):
            raise ValueError(f"mass must be 0 or 1, got {self.mass}")
        if self.n_per_axis**self.dim > self.max_points:
            raise ValueError(
                f"{self.n_per_axis}^{self.dim} points exceed the memory budget "
                f"({self.max_points})"
            )
        object.__setattr__(self, "_cache", {})

    # -- lattice geometry ---------------------------------------------------

    @property
    def shape(self) -> tuple:
        return (self.n_per_axis,) * self.dim

    @property
    def npoints(self) -> int:
        return self.n_per_axis**self.dim

    @property
    def dx(self) -> float:
        return self.box_length / self.n_per_axis

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def s_c(self) -> float:
        """Critical Sobolev regularity d/2 - 1 of the cubic equation."""
        return self.dim / 2.0 - 1.0

    def _cached(self, key, builder):
        cache = self._cache
        if key not in cache:
            cache[key] = builder()
        return cache[key]

    @property
    def x1(self) -> np.ndarray:
        """Physical coordinates along one axis."""
        n, L = self.n_per_axis, self.box_length
        return self._cached("x1", lambda: -L / 2 + (L / n) * np.arange(n))

    @property
    def xi1(self) -> np.ndarray:
        """Frequency coordinates along one axis, DFT ordering."""
        n, L = self.n_per_axis, self.box_length
        return self._cached(
            "xi1", lambda: (2 * np.pi / L) * np.fft.fftfreq(n, d=1.0 / n)
        )

    @property
    def xi(self) -> np.ndarray:
        """Stacked frequency meshgrid, shape (dim, n, ..., n)."""

        def build():
            axes = np.meshgrid(*([self.xi1] * self.dim), indexing="ij")
            return np.stack(axes)

        return self._cached("xi", build)

    @property
    def xi_sq(self) -> np.ndarray:
        return self._cached("xi_sq", lambda: (self.xi**2).sum(axis=0))

    @property
    def xi_abs(self) -> np.ndarray:
        return self._cached("xi_abs", lambda: np.sqrt(self.xi_sq))

    @property
    def omega(self) -> np.ndarray:
        """Dispersion relation sqrt(mass + |xi|^2) on the lattice."""
        return self._cached("omega", lambda: np.sqrt(self.mass + self.xi_sq))

    @property
    def omega_max(self) -> float:
        return float(self.omega.max())

    @property
    def nyquist_mask(self) -> np.ndarray:
        """True on modes with any axis index equal to n/2."""

        def build():
            n = self.n_per_axis
            mask = np.zeros(self.shape, dtype=bool)
            for ax in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[ax] = n // 2
                mask[tuple(idx)] = True
            return mask

        return self._cached("nyquist", build)

    @property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: True on modes kept for nonlinear products."""

        def build():
            n = self.n_per_axis
            kcut = n // 3
            k1 = np.rint(np.fft.fftfreq(n, d=1.0 / n)).astype(int)
            keep1 = np.abs(k1) <= kcut
            mask = np.ones(self.shape, dtype=bool)
            for ax in range(self.dim):
                sl = [None] * self.dim
                sl[ax] = slice(None)
                mask &= keep1[tuple(sl)]
            return mask

        return self._cached("dealias", build)

    def coords(self) -> np.ndarray:
        """Stacked physical meshgrid, shape (dim, n, ..., n)."""

        def build():
            axes = np.meshgrid(*([self.x1] * self.dim), indexing="ij")
            return np.stack(axes)

        return self._cached("coords", build)

    def periodic_delta(self, center) -> np.ndarray:
        """Per-axis displacement x - center wrapped into [-L/2, L/2)."""
        center = np.asarray(center, dtype=float)
        L = self.box_length
        delta = self.coords() - center.reshape((self.dim,) + (1,) * self.dim)
        return (delta + L / 2) % L - L / 2

    def periodic_distance(self, center) -> np.ndarray:
        """Torus distance from every grid point to ``center``."""
        delta = self.periodic_delta(center)
        return np.sqrt((delta**2).sum(axis=0))

    def compatible(self, other: "Grid") -> bool:
        return (
            self.dim == other.dim
            and self.n_per_axis == other.n_per_axis
            and self.box_length == other.box_length
            and self.mass == other.mass
        )


def _require_same_grid(a, b):
    if a.grid is not b.grid and not a.grid.compatible(b.grid):
        raise GridMismatchError("operands live on different grids")


# -- fields -------------------------------------------------------------------


@dataclass
class SpectralField:
    """A scalar field held by its lattice Fourier coefficients."""

    grid: Grid
    coeffs: np.ndarray

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> "SpectralField":
        values = np.asarray(values)
        if values.shape != grid.shape:
            raise ValueError(f"field shape {values.shape} != grid shape {grid.shape}")
        coeffs = fftn(values.astype(complex))
        coeffs[grid.nyquist_mask] = 0.0
        return cls(grid, coeffs)

    @classmethod
    def zero(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    def to_physical(self) -> np.ndarray:
        """Inverse transform; complex in general, real up to roundoff for
        conjugate-symmetric coefficients."""
        return ifftn(self.coeffs)

    def to_real(self) -> np.ndarray:
        return self.to_physical().real

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    def l2_norm(self) -> float:
        """Physical L^2 norm, evaluated exactly by Parseval."""
        g = self.grid
        w = g.box_length**g.dim / g.npoints**2
        return math.sqrt(w * float((np.abs(self.coeffs) ** 2).sum()))

    def conjugate_symmetry_defect(self) -> float:
        """Relative size of c(-k) - conj(c(k)); ~0 for real-valued fields."""
        c = self.coeffs
        flipped = c
        for ax in range(c.ndim):
            flipped = np.flip(np.roll(flipped, -1, axis=ax), axis=ax)
        scale = float(np.abs(c).max())
        if scale == 0.0:
            return 0.0
        return float(np.abs(flipped - np.conj(c)).max()) / scale

    def __add__(self, other):
        _require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass
class StateVec:
    """The pair (u, udot) in physical space, float64 samples."""

    grid: Grid
    u: np.ndarray
    udot: np.ndarray

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        self.udot = np.ascontiguousarray(self.udot, dtype=np.float64)
        if self.u.shape != self.grid.shape or self.udot.shape != self.grid.shape:
            raise ValueError("state arrays do not match the grid shape")

    @classmethod
    def zero(cls, grid: Grid) -> "StateVec":
        z = np.zeros(grid.shape)
        return cls(grid, z, z.copy())

    def copy(self) -> "StateVec":
        return StateVec(self.grid, self.u.copy(), self.udot.copy())

    def __sub__(self, other: "StateVec") -> "StateVec":
        _require_same_grid(self, other)
        return StateVec(self.grid, self.u - other.u, self.udot - other.udot)

    def __add__(self, other: "StateVec") -> "StateVec":
        _require_same_grid(self, other)
        return StateVec(self.grid, self.u + other.u, self.udot + other.udot)

    def __mul__(self, scalar):
        return StateVec(self.grid, self.u * scalar, self.udot * scalar)

    __rmul__ = __mul__

    def l2_pair_norm(self) -> float:
        w = self.grid.cell_volume
        return math.sqrt(w * float((self.u**2).sum() + (self.udot**2).sum()))

    def to_complex_form(self) -> SpectralField:
        """The complex field carrying (u, udot) in one unknown.

        In Fourier variables  vec = omega^{s_c} u_hat - i omega^{s_c-1} udot_hat
        with omega the grid dispersion; the first-order flow of the free
        equation is then multiplication by exp(i t omega) (see half_wave).
        For mass=0 the zero mode is annihilated (omega=0 there).
        """
        g = self.grid
        sc = g.s_c
        omega = g.omega
        with np.errstate(divide="ignore", invalid="ignore"):
            w_hi = omega**sc
            w_lo = omega ** (sc - 1.0)
        zero = (0,) * g.dim
        if g.mass == 0.0:
            w_hi[zero] = 0.0
            w_lo[zero] = 0.0
        u_hat = fftn(self.u.astype(complex))
        v_hat = fftn(self.udot.astype(complex))
        coeffs = w_hi * u_hat - 1j * w_lo * v_hat
        coeffs[g.nyquist_mask] = 0.0
        return SpectralField(g, coeffs)

    @classmethod
    def from_complex_form(cls, field: SpectralField) -> "StateVec":
        g = field.grid
        sc = g.s_c
        omega = g.omega
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_hi = omega**-sc
            inv_lo = omega ** (1.0 - sc)
        zero = (0,) * g.dim
        if g.mass == 0.0:
            inv_hi[zero] = 0.0
            inv_lo[zero] = 0.0
        vec = field.coeffs
        # u = Re <grad>^{-s_c} vec ; udot = -Im <grad>^{1-s_c} vec.
        # Real parts in physical space correspond to the symmetric part of the
        # spectrum, so transform first and take Re/-Im afterwards.
        u = ifftn(inv_hi * vec).real
        udot = -ifftn(inv_lo * vec).imag
        return cls(g, u, udot)


# -- operations ---------------------------------------------------------------


def apply_multiplier(
    field: SpectralField,
    symbol,
    zero_mode_policy: str = "error",
) -> SpectralField:
    """Multiply the coefficients pointwise by ``symbol(xi)``.

    ``symbol`` receives the stacked frequency meshgrid (shape ``(d, n, .., n)``)
    and must return a finite array everywhere except possibly at xi=0.  A
    singular zero mode is either an error (default; tolerated if the
    coefficient there is below ZERO_MODE_TOL relative) or annihilated when
    ``zero_mode_policy="annihilate"``.
    """
    if zero_mode_policy not in ("error", "annihilate"):
        raise ValueError(f"unknown zero_mode_policy {zero_mode_policy!r}")
    g = field.grid
    with np.errstate(divide="ignore", invalid="ignore"):
        sym = np.asarray(symbol(g.xi), dtype=complex)
    sym = np.broadcast_to(sym, g.shape).copy()
    zero = (0,) * g.dim
    out = field.coeffs.copy()
    if not np.isfinite(sym[zero]):
        scale = float(np.abs(out).max())
        c0 = abs(out[zero])
        if zero_mode_policy == "error" and scale > 0 and c0 > ZERO_MODE_TOL * scale:
            raise ZeroModeSingularity(
                f"symbol singular at xi=0 but zero mode carries {c0:.3e} "
                f"(relative {c0 / scale:.3e})"
            )
        sym[zero] = 0.0
        out[zero] = 0.0
    bad = ~np.isfinite(sym)
    bad[zero] = False
    if bad.any():
        raise ValueError("symbol is non-finite away from xi=0")
    out *= sym
    out[g.nyquist_mask] = 0.0
    return SpectralField(g, out)


def _free_flow_arrays(grid: Grid, t: float):
    """cos(t*omega), sin(t*omega)/omega and omega*sin(t*omega) on the lattice."""
    omega = grid.omega
    tw = t * omega
    C = np.cos(tw)
    # sin(t w)/w -> t as w -> 0 (massless zero mode)
    S = t * np.sinc(tw / np.pi)
    wS = omega * np.sin(tw)
    return C, S, wS


def free_propagate(state: StateVec, t: float) -> StateVec:
    """Exact free Klein-Gordon flow V0(t) applied to (u, udot).

    Mode by mode:  u_hat(t)   =  cos(t w) u_hat + sin(t w)/w udot_hat,
                   udot_hat(t) = -w sin(t w) u_hat + cos(t w) udot_hat.
    """
    g = state.grid
    C, S, wS = _free_flow_arrays(g, t)
    u_hat = fftn(state.u.astype(complex))
    v_hat = fftn(state.udot.astype(complex))
    u_new = ifftn(C * u_hat + S * v_hat).real
    v_new = ifftn(-wS * u_hat + C * v_hat).real
    return StateVec(g, u_new, v_new)


def half_wave(vec_field: SpectralField, t: float) -> SpectralField:
    """Multiply the complex-form coefficients by exp(i t omega) (unitary)."""
    g = vec_field.grid
    phase = np.exp(1j * t * g.omega)
    return SpectralField(g, vec_field.coeffs * phase)


# -- initial data -------------------------------------------------------------


def gaussian_bump(grid: Grid, amplitude: float, width: float, center=None) -> np.ndarray:
    """amp * exp(-|x-c|^2 / (2 width^2)) with periodic (nearest-image) distance."""
    if center is None:
        center = np.zeros(grid.dim)
    d2 = grid.periodic_distance(center) ** 2
    return amplitude * np.exp(-d2 / (2.0 * width**2))


def single_mode(grid: Grid, amplitude: float, k: int = 1, axis: int = 0) -> np.ndarray:
    """amp * cos(2*pi*k x_axis / L)."""
    x = grid.coords()[axis]
    return amplitude * np.cos(2 * np.pi * k * x / grid.box_length)


# -- binary snapshot format ----------------------------------------------------
#
# Little-endian header: magic "KGF1", dim (u32), n_per_axis (u32), L (f64),
# mass flag (u32), field count (u32); then field_count raw float64 arrays of
# physical-space samples in row-major order.


def save_snapshot(path, grid: Grid, fields) -> None:
    fields = [np.ascontiguousarray(f, dtype="<f8") for f in fields]
    for f in fields:
        if f.shape != grid.shape:
            raise ValueError("snapshot field does not match the grid shape")
    header = _HEADER.pack(
        SNAPSHOT_MAGIC,
        grid.dim,
        grid.n_per_axis,
        grid.box_length,
        int(grid.mass),
        len(fields),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for f in fields:
            fh.write(f.tobytes(order="C"))


def load_snapshot(path):
    """Read a snapshot; returns (grid, list of float64 arrays)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise SnapshotFormatError("truncated header")
        magic, dim, n, L, mass, count = _HEADER.unpack(raw)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotFormatError(f"bad magic {magic!r}")
        grid = Grid(dim=dim, n_per_axis=n, box_length=L, mass=float(mass))
        fields = []
        expect = grid.npoints * 8
        for _ in range(count):
            buf = fh.read(expect)
            if len(buf) != expect:
                raise SnapshotFormatError("truncated field payload")
            fields.append(
                np.frombuffer(buf, dtype="<f8").reshape(grid.shape).copy()
            )
    return grid, fields
