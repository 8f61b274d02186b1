"""Scalar functionals on states and trajectories.

Everything the defocusing argument runs on, made computable: the conserved
energy and its parts, the Morawetz space-time integral with torus weight
1/dist(x, center), windowed potential-energy concentration, the |u|^4
centroid x(t) with its drift bound, the compactness modulus C(eta), and the
scattering detector built on the free-flow pullback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import CoverageError, InvalidStatus
from .lpbesov import pair_sobolev_norm
from .spectral import Grid, SpectralField, StateVec, apply_multiplier, fftn, free_propagate


@dataclass
class EnergyParts:
    """E = kinetic + gradient + mass_part + potential, all by grid quadrature
    (quadratic terms exact via Parseval)."""

    kinetic: float
    gradient: float
    mass_part: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.gradient + self.mass_part + self.potential

    @property
    def quadratic(self) -> float:
        return self.kinetic + self.gradient + self.mass_part


@dataclass
class DiagnosticsRecord:
    time: float
    energy: float
    kinetic: float
    gradient: float
    mass_part: float
    potential: float
    h_sc_norm: float
    morawetz_cum: float
    center: np.ndarray
    scatter_residual: float

    CSV_PREFIX = [
        "time",
        "energy",
        "kinetic",
        "gradient",
        "mass_part",
        "potential",
        "h_sc_norm",
        "morawetz_cum",
    ]

    @staticmethod
    def csv_columns(dim: int):
        return (
            DiagnosticsRecord.CSV_PREFIX
            + [f"center_{a}" for a in range(dim)]
            + ["scatter_residual"]
        )

    def csv_row(self):
        vals = [
            self.time,
            self.energy,
            self.kinetic,
            self.gradient,
            self.mass_part,
            self.potential,
            self.h_sc_norm,
            self.morawetz_cum,
            *[float(c) for c in self.center],
            self.scatter_residual,
        ]
        return [repr(float(v)) for v in vals]


def energy(state: StateVec, sign: float = 1.0) -> EnergyParts:
    """Energy parts of (u, udot); ``sign`` flips the quartic term for the
    focusing test fixture."""
    g = state.grid
    w_spec = g.box_length**g.dim / g.npoints**2
    u_hat = fftn(state.u.astype(complex))
    kinetic = 0.5 * g.cell_volume * float((state.udot**2).sum())
    gradient = 0.5 * w_spec * float((g.xi_sq * np.abs(u_hat) ** 2).sum())
    mass_part = 0.5 * g.mass * g.cell_volume * float((state.u**2).sum())
    potential = sign * 0.25 * g.cell_volume * float((state.u**4).sum())
    return EnergyParts(kinetic, gradient, mass_part, potential)


# -- Morawetz -------------------------------------------------------------------


@lru_cache(maxsize=8)
def _corner_cell_integral(dim: int) -> float:
    """J = integral of 1/|x| over the unit cube [0,1]^d touching the
    singularity at the origin.

    Self-similar splitting: the origin octant is a half-scale copy
    contributing 2^{1-d} J, the remaining 2^d - 1 subcells are regular and
    integrated with Gauss-Legendre, so J = G / (1 - 2^{1-d}).  Finite only
    for d >= 2 (1/|x| is not integrable across a point in 1d).
    """
    if dim < 2:
        raise ValueError("cell average of 1/|x| diverges in 1d")
    order = {2: 24, 3: 12, 4: 8, 5: 6}[dim]
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = 0.25 * (nodes + 1.0)  # map to [0, 1/2]
    weights = 0.25 * weights
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    wgrids = np.meshgrid(*([weights] * dim), indexing="ij")
    wprod = np.prod(np.stack(wgrids), axis=0)
    total = 0.0
    for corner in range(1, 2**dim):
        offs = [(corner >> a) & 1 for a in range(dim)]
        pts = [grids[a] + 0.5 * offs[a] for a in range(dim)]
        r = np.sqrt(sum(p**2 for p in pts))
        total += float((wprod / r).sum())
    return total / (1.0 - 2.0 ** (1 - dim))


def morawetz_weight(grid: Grid, center) -> np.ndarray:
    """1/dist(x, center) with torus distance, restricted to the ball of
    radius L/2; the singular cell gets its exact cell average 2 J / h."""
    dist = grid.periodic_distance(center)
    h = grid.dx
    weight = np.zeros(grid.shape)
    near = dist < 1e-9 * h
    with np.errstate(divide="ignore"):
        weight[~near] = 1.0 / dist[~near]
    if near.any():
        weight[near] = 2.0 * _corner_cell_integral(grid.dim) / h
    weight[dist > grid.box_length / 2.0] = 0.0
    return weight


def _window_selection(times, t0, t1):
    times = np.asarray(times, dtype=float)
    eps = 1e-9 * max(1.0, abs(t1 - t0))
    if t0 < times[0] - eps or t1 > times[-1] + eps:
        raise CoverageError(
            f"window [{t0}, {t1}] not covered by samples [{times[0]}, {times[-1]}]"
        )
    return (times >= t0 - eps) & (times <= t1 + eps)


def morawetz_integral(traj, window, center=None) -> float:
    """Time-trapezoid of integral |u|^4 / dist(x, center) dx over the window."""
    grid = traj.grid
    if center is None:
        center = np.zeros(grid.dim)
    t0, t1 = window
    sel = _window_selection(traj.times, t0, t1)
    weight = morawetz_weight(grid, center)
    times = np.asarray(traj.times, dtype=float)[sel]
    vals = np.array(
        [
            grid.cell_volume * float((st.u**4 * weight).sum())
            for st, keep in zip(traj.states, sel)
            if keep
        ]
    )
    return float(np.trapezoid(vals, times))


def morawetz_cumulative(traj, center=None) -> np.ndarray:
    """Cumulative Morawetz integral at every stored sample time."""
    grid = traj.grid
    if center is None:
        center = np.zeros(grid.dim)
    weight = morawetz_weight(grid, center)
    vals = np.array(
        [grid.cell_volume * float((st.u**4 * weight).sum()) for st in traj.states]
    )
    times = np.asarray(traj.times, dtype=float)
    out = np.zeros_like(times)
    if len(times) > 1:
        seg = 0.5 * (vals[1:] + vals[:-1]) * np.diff(times)
        out[1:] = np.cumsum(seg)
    return out


# -- centroid and concentration ---------------------------------------------------


class CenterResult(NamedTuple):
    center: np.ndarray
    degenerate: bool
    resultant: float


def spatial_center(state: StateVec) -> CenterResult:
    """Periodic centroid of the density |u|^4 (circular mean per axis).

    Degenerate (flagged, box center returned) when the density vanishes or
    any axis resultant length drops below 0.1, e.g. for balanced two-bump
    configurations where no circular mean is meaningful.
    """
    g = state.grid
    rho = state.u**4
    total = float(rho.sum())
    center = np.zeros(g.dim)
    if total <= 0.0:
        return CenterResult(center, True, 0.0)
    L = g.box_length
    coords = g.coords()
    resultant = np.inf
    for a in range(g.dim):
        z = complex((rho * np.exp(2j * np.pi * coords[a] / L)).sum())
        length = abs(z) / total
        resultant = min(resultant, length)
        center[a] = np.angle(z) * L / (2 * np.pi)
    if resultant < 0.1:
        return CenterResult(np.zeros(g.dim), True, float(resultant))
    return CenterResult(center, False, float(resultant))


def potential_concentration(traj, t0: float, tau: float, radius: float) -> float:
    """integral over [t0, t0+tau] of the |u|^4 mass within ``radius`` of the
    per-sample centroid x(t) (whole box for radius=inf)."""
    grid = traj.grid
    sel = _window_selection(traj.times, t0, t0 + tau)
    times = np.asarray(traj.times, dtype=float)[sel]
    vals = []
    for st, keep in zip(traj.states, sel):
        if not keep:
            continue
        rho = st.u**4
        if math.isinf(radius):
            vals.append(grid.cell_volume * float(rho.sum()))
        else:
            c = spatial_center(st).center
            mask = grid.periodic_distance(c) <= radius
            vals.append(grid.cell_volume * float(rho[mask].sum()))
    return float(np.trapezoid(np.array(vals), times))


def _periodic_point_distance(grid: Grid, a, b) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    L = grid.box_length
    d = (d + L / 2) % L - L / 2
    return float(np.sqrt((d**2).sum()))


@dataclass
class DriftReport:
    implied_2cu: float
    max_speed: float
    pairs_checked: int
    degenerate_skipped: int


def drift_check(traj) -> DriftReport:
    """Largest excess of centroid displacement over elapsed time:
    max over sample pairs of (|x(t1)-x(t2)| - |t1-t2|), floored at 0."""
    centers, times = [], []
    skipped = 0
    for t, st in zip(traj.times, traj.states):
        res = spatial_center(st)
        if res.degenerate:
            skipped += 1
            continue
        centers.append(res.center)
        times.append(float(t))
    if len(centers) < 2:
        return DriftReport(0.0, 0.0, 0, skipped)
    excess = 0.0
    speed = 0.0
    pairs = 0
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            dist = _periodic_point_distance(traj.grid, centers[i], centers[j])
            dt = abs(times[j] - times[i])
            excess = max(excess, dist - dt)
            if dt > 0:
                speed = max(speed, dist / dt)
            pairs += 1
    return DriftReport(max(excess, 0.0), speed, pairs, skipped)


def compactness_modulus(traj, eta: float) -> float:
    """Smallest dyadic-ladder radius C with
    sup_t integral_{dist(x, x(t)) >= C} (|<grad>^{s_c} u|^2 +
    |<grad>^{s_c-1} udot|^2) dx <= eta; inf if no ladder radius works."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    grid = traj.grid
    sc = grid.s_c
    radii = []
    r = grid.dx
    while r < grid.box_length / 2.0:
        radii.append(r)
        r *= 2.0
    radii.append(grid.box_length / 2.0)
    tails = np.zeros(len(radii))
    bessel_hi = lambda xi: (1.0 + (xi**2).sum(0)) ** (sc / 2.0)
    bessel_lo = lambda xi: (1.0 + (xi**2).sum(0)) ** ((sc - 1.0) / 2.0)
    for st in traj.states:
        gu = apply_multiplier(
            SpectralField.from_physical(grid, st.u), bessel_hi
        ).to_real()
        gv = apply_multiplier(
            SpectralField.from_physical(grid, st.udot), bessel_lo
        ).to_real()
        density = gu**2 + gv**2
        c = spatial_center(st).center
        dist = grid.periodic_distance(c)
        for m, rad in enumerate(radii):
            tails[m] = max(
                tails[m], grid.cell_volume * float(density[dist >= rad].sum())
            )
    for rad, tail in zip(radii, tails):
        if tail <= eta:
            return float(rad)
    return math.inf


# -- scattering ------------------------------------------------------------------


@dataclass
class ScatterReport:
    limit_state: StateVec
    cauchy_residuals: list  # (t, residual) at stored samples before the last
    verdict: str  # "scatters" | "inconclusive"
    tol: float


MIN_SCATTER_HORIZON = 10.0


def scattering_detect(traj, tol: float) -> ScatterReport:
    """Free-flow pullback w(t) = V0(-t)(u, udot)(t); the limit candidate is
    the final sample's pullback and the residuals are pair-Sobolev distances
    of the earlier pullbacks to it.

    Verdict "scatters" iff the horizon is >= 10, the last residual (before
    the limit sample) is < tol, and the residuals are nonincreasing (5%
    slack) over the final third of samples.
    """
    if traj.status == "blowup_suspected":
        raise InvalidStatus("cannot run scattering detection on a blowup trajectory")
    times = np.asarray(traj.times, dtype=float)
    pullbacks = [
        free_propagate(st, -float(t)) for t, st in zip(times, traj.states)
    ]
    limit = pullbacks[-1]
    sc = traj.grid.s_c
    residuals = [
        (float(t), pair_sobolev_norm(w - limit, sc))
        for t, w in zip(times[:-1], pullbacks[:-1])
    ]
    verdict = "inconclusive"
    horizon = times[-1] - times[0]
    if residuals and horizon >= MIN_SCATTER_HORIZON:
        vals = [r for _, r in residuals]
        last_third = vals[max(0, len(vals) - max(2, len(vals) // 3)) :]
        nonincreasing = all(
            b <= a * 1.05 + 1e-15 for a, b in zip(last_third, last_third[1:])
        )
        if vals[-1] < tol and nonincreasing:
            verdict = "scatters"
    return ScatterReport(limit, residuals, verdict, tol)


# -- per-trajectory records --------------------------------------------------------


def trajectory_records(traj, center=None, scatter_report=None, sign: float = 1.0):
    """One DiagnosticsRecord per stored sample."""
    grid = traj.grid
    cum = morawetz_cumulative(traj, center) if grid.dim >= 2 else np.zeros(len(traj.times))
    res_map = {}
    if scatter_report is not None:
        res_map = {t: r for t, r in scatter_report.cauchy_residuals}
    records = []
    for i, (t, st) in enumerate(zip(traj.times, traj.states)):
        parts = energy(st, sign=sign)
        records.append(
            DiagnosticsRecord(
                time=float(t),
                energy=parts.total,
                kinetic=parts.kinetic,
                gradient=parts.gradient,
                mass_part=parts.mass_part,
                potential=parts.potential,
                h_sc_norm=pair_sobolev_norm(st, grid.s_c),
                morawetz_cum=float(cum[i]),
                center=spatial_center(st).center,
                scatter_residual=res_map.get(float(t), math.nan),
            )
        )
    return records
