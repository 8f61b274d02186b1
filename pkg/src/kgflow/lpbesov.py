"""Littlewood-Paley bank and norm calculators.

Dyadic blocks Delta_j carry the smooth radial symbol psi_hat(xi / 2^j) with
supp psi_hat in {1/2 <= |xi| <= 2}; the low block P0 carries psi0_hat with
psi0_hat = 1 on |xi| <= 1 and support in |xi| <= 2.  Both are built from the
standard C-infinity transition exp(-1/x), so the telescoping sums

    psi0_hat(xi) + sum_{j>=1} psi_hat(xi/2^j) = 1          (inhomogeneous)
    sum_{j in Z} psi_hat(xi/2^j) = 1   for xi != 0         (homogeneous)

hold exactly on the resolved lattice range.

On top of the bank sit the Sobolev H^s / homogeneous Hdot^s norms, the Besov
B^s_{r,2} / Bdot^s_{r,2} norms by grid quadrature, the space-time Strichartz
norms (L^q in time by composite trapezoid over stored samples), and the
randomized inequality harness.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, RangeError, ZeroModeSingularity
from .spectral import (
    Grid,
    SpectralField,
    StateVec,
    apply_multiplier,
    fftn,
    free_propagate,
    gaussian_bump,
    half_wave,
    ifftn,
)

LOW = "low"  # tag selecting the P0 block in lp_project


def _smooth_step(x):
    """C-infinity transition: 0 for x<=0, 1 for x>=1, exp(-1/x) based."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    lo = x <= 0.0
    hi = x >= 1.0
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    xm = x[mid]
    a = np.exp(-1.0 / xm)
    b = np.exp(-1.0 / (1.0 - xm))
    out[mid] = a / (a + b)
    return out


def psi0_hat(r):
    """Low-pass symbol: 1 on r<=1, 0 on r>=2, smooth in between."""
    return _smooth_step(2.0 - np.asarray(r, dtype=float))


def psi_hat(r):
    """Annular symbol supported in {1/2 <= r <= 2}: psi0(r) - psi0(2r)."""
    r = np.asarray(r, dtype=float)
    return psi0_hat(r) - psi0_hat(2.0 * r)


@dataclass(frozen=True)
class LPBank:
    """Immutable Littlewood-Paley projection bank for one grid.

    j_min/j_max bracket the dyadic range present on the lattice: every
    nonzero frequency has magnitude in [2^j_min, 2^j_max].
    """

    grid: Grid
    j_min: int = 0
    j_max: int = 0

    def __post_init__(self):
        g = self.grid
        r_min = 2 * np.pi / g.box_length
        r_max = (2 * np.pi / g.box_length) * (g.n_per_axis / 2) * math.sqrt(g.dim)
        object.__setattr__(self, "j_min", int(math.floor(math.log2(r_min))))
        object.__setattr__(self, "j_max", int(math.ceil(math.log2(r_max))))
        object.__setattr__(self, "_symbols", {})

    def block_symbol(self, j) -> np.ndarray:
        """Lattice array of psi_hat(|xi|/2^j), or psi0_hat(|xi|) for LOW."""
        cache = self._symbols
        if j not in cache:
            r = self.grid.xi_abs
            if j == LOW:
                cache[j] = psi0_hat(r)
            else:
                if not self.j_min <= j <= self.j_max:
                    raise RangeError(
                        f"block {j} outside resolved range [{self.j_min}, {self.j_max}]"
                    )
                cache[j] = psi_hat(r / 2.0**j)
        return cache[j]

    def inhomogeneous_blocks(self):
        """Block labels for P0 u + sum_{j>=1} Delta_j u = u."""
        return [LOW] + list(range(1, self.j_max + 1))

    def homogeneous_blocks(self):
        return list(range(self.j_min, self.j_max + 1))


def lp_project(bank: LPBank, fld: SpectralField, j) -> SpectralField:
    """Apply Delta_j (or P0 with j=LOW) to the field."""
    if fld.grid is not bank.grid and not fld.grid.compatible(bank.grid):
        raise RangeError("field grid does not match the bank grid")
    return SpectralField(fld.grid, fld.coeffs * bank.block_symbol(j))


# -- scalar norms --------------------------------------------------------------


def lr_norm(values: np.ndarray, r: float, cell_volume: float) -> float:
    """Grid quadrature of the L^r norm; r may be inf."""
    a = np.abs(values)
    if math.isinf(r):
        return float(a.max()) if a.size else 0.0
    return float((cell_volume * (a**r).sum()) ** (1.0 / r))


def sobolev_norm(
    fld: SpectralField,
    s: float,
    homogeneous: bool = False,
    zero_mode_policy: str = "error",
) -> float:
    """H^s norm ||(1+|xi|^2)^{s/2} u_hat||_2 (or |xi|^s for homogeneous)."""
    g = fld.grid
    if homogeneous:
        with np.errstate(divide="ignore"):
            weight = g.xi_sq**s
        zero = (0,) * g.dim
        if s < 0 and not np.isfinite(weight[zero]):
            c0 = abs(fld.coeffs[zero])
            scale = float(np.abs(fld.coeffs).max())
            if (
                zero_mode_policy == "error"
                and scale > 0
                and c0 > 1e-10 * scale
            ):
                raise ZeroModeSingularity(
                    "homogeneous norm with s<0 on a field with nonzero mean"
                )
            weight[zero] = 0.0
        elif s == 0:
            weight[zero] = 1.0
        else:
            weight[zero] = 0.0
    else:
        weight = (1.0 + g.xi_sq) ** s
    w = g.box_length**g.dim / g.npoints**2
    return math.sqrt(w * float((weight * np.abs(fld.coeffs) ** 2).sum()))


def pair_sobolev_norm(state: StateVec, s: float) -> float:
    """sqrt(||u||_{H^s}^2 + ||udot||_{H^{s-1}}^2)."""
    fu = SpectralField(state.grid, fftn(state.u.astype(complex)))
    fv = SpectralField(state.grid, fftn(state.udot.astype(complex)))
    return math.sqrt(
        sobolev_norm(fu, s) ** 2 + sobolev_norm(fv, s - 1.0) ** 2
    )


@dataclass(frozen=True)
class NormSpec:
    """Exponent bundle for Besov / space-time norms.

    s: regularity weight 2^{js}; r: spatial Lebesgue exponent (r > 1; the dual
    scattering norm needs r = 2(d+1)/(d+3) < 2); homogeneous: all-j blocks
    versus P0 + j>=1; q: time exponent for space-time norms (unset for purely
    spatial use); interval: [t0, t1] for space-time norms.
    """

    s: float
    r: float
    homogeneous: bool = False
    q: float | None = None
    interval: tuple | None = None

    def __post_init__(self):
        if not (self.r > 1.0 or math.isinf(self.r)):
            raise ValueError("Lebesgue exponent r must exceed 1")
        if self.q is not None and self.q < 1.0:
            raise ValueError("time exponent q must be >= 1")

    @staticmethod
    def w_norm(d: int, interval=None) -> "NormSpec":
        """The scattering-size norm [W]: L^q_t B^s_{r,2}, q=r=2(d+1)/(d-1),
        s=(d-3)/2.  Undefined for d=1."""
        if d < 2:
            raise ValueError("[W] norm requires dimension >= 2")
        qr = 2.0 * (d + 1) / (d - 1)
        return NormSpec(s=(d - 3) / 2.0, r=qr, q=qr, interval=interval)

    @staticmethod
    def w_dual(d: int, interval=None) -> "NormSpec":
        """The dual norm [W]*: L^{q'}_t B^s_{r',2} with q'=r'=2(d+1)/(d+3)."""
        if d < 2:
            raise ValueError("[W]* norm requires dimension >= 2")
        qr = 2.0 * (d + 1) / (d + 3)
        return NormSpec(s=(d - 3) / 2.0, r=qr, q=qr, interval=interval)

    def spatial(self) -> "NormSpec":
        return NormSpec(s=self.s, r=self.r, homogeneous=self.homogeneous)


def besov_norm(bank: LPBank, fld: SpectralField, spec: NormSpec) -> float:
    """(sum_j 2^{2js} ||Delta_j u||_r^2)^{1/2}, plus the P0 term when
    inhomogeneous.  ||.||_r by grid quadrature."""
    if spec.q is not None:
        raise ValueError("besov_norm takes a purely spatial NormSpec (q unset)")
    g = bank.grid
    acc = 0.0
    if spec.homogeneous:
        zero = (0,) * g.dim
        c0 = abs(fld.coeffs[zero])
        scale = float(np.abs(fld.coeffs).max())
        if scale > 0 and c0 > 1e-10 * scale:
            raise ZeroModeSingularity(
                "homogeneous Besov norm on a field with nonzero mean"
            )
        blocks = bank.homogeneous_blocks()
    else:
        blocks = bank.inhomogeneous_blocks()
    for j in blocks:
        piece = ifftn(fld.coeffs * bank.block_symbol(j))
        nrm = lr_norm(piece, spec.r, g.cell_volume)
        weight = 1.0 if j == LOW else 2.0 ** (j * spec.s)
        acc += (weight * nrm) ** 2
    return math.sqrt(acc)


def _trapezoid_lq(times: np.ndarray, values: np.ndarray, q: float) -> float:
    if math.isinf(q):
        return float(values.max()) if values.size else 0.0
    return float(np.trapezoid(values**q, times) ** (1.0 / q))


def strichartz_norm(bank: LPBank, traj, spec: NormSpec) -> float:
    """L^q-in-time composite trapezoid of the spatial Besov norm over the
    trajectory's stored samples inside spec.interval.

    ``traj`` needs ``times`` and ``states`` attributes; the norm is taken of
    the u component.  The interval is snapped to stored sample times.
    """
    if spec.q is None:
        raise ValueError("strichartz_norm needs spec.q set")
    if spec.interval is None:
        t0, t1 = float(traj.times[0]), float(traj.times[-1])
    else:
        t0, t1 = spec.interval
    times = np.asarray(traj.times, dtype=float)
    eps = 1e-9 * max(1.0, abs(t1 - t0))
    if t0 < times[0] - eps or t1 > times[-1] + eps:
        raise CoverageError(
            f"interval [{t0}, {t1}] not covered by samples "
            f"[{times[0]}, {times[-1]}]"
        )
    sel = (times >= t0 - eps) & (times <= t1 + eps)
    spatial = spec.spatial()
    vals = np.array(
        [
            besov_norm(
                bank,
                SpectralField.from_physical(bank.grid, st.u),
                spatial,
            )
            for st, keep in zip(traj.states, sel)
            if keep
        ]
    )
    return _trapezoid_lq(times[sel], vals, spec.q)


# -- inequality harness ---------------------------------------------------------


@dataclass
class InequalityReport:
    kind: str
    samples: int
    skipped: int
    rows: list  # (seed, sample_id, lhs, rhs, ratio)
    max_ratio: float
    seed_maxima: dict
    passed: bool
    extra: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "seed", "sample_id", "lhs", "rhs", "ratio"])
            for seed, sid, lhs, rhs, ratio in self.rows:
                w.writerow(
                    [self.kind, seed, sid, repr(float(lhs)), repr(float(rhs)), repr(float(ratio))]
                )

    def write_json(self, path):
        payload = {
            "schema": 1,
            "kind": self.kind,
            "samples": self.samples,
            "skipped": self.skipped,
            "max_ratio": self.max_ratio,
            "seed_maxima": {str(k): v for k, v in self.seed_maxima.items()},
            "pass": self.passed,
            **self.extra,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _harness_field(grid, rng, decay=2.5):
    white = rng.standard_normal(grid.shape)
    envelope = (1.0 + grid.xi_sq) ** (-decay / 2.0)
    coeffs = fftn(white.astype(complex)) * envelope
    coeffs[grid.nyquist_mask] = 0.0
    coeffs[(0,) * grid.dim] = 0.0  # mean zero keeps homogeneous symbols happy
    return SpectralField(grid, coeffs)


def _seed_stability(seed_maxima, tol=0.5):
    vals = np.array([v for v in seed_maxima.values() if np.isfinite(v) and v > 0])
    if len(vals) < 2:
        return True
    mean = vals.mean()
    return bool(np.all(np.abs(vals / mean - 1.0) <= tol))


def _product_rule_harness(samples, seed, d, n):
    grid = Grid(d, n, 2 * np.pi)
    bank = LPBank(grid)
    s = 1.0
    abs_grad = lambda xi: np.sqrt((xi**2).sum(0)) ** s
    rows, skipped = [], 0
    sub_seeds = [seed, seed + 1, seed + 2]
    per = [samples // 3] * 3
    per[0] += samples - sum(per)
    seed_maxima = {}
    for sub_seed, count in zip(sub_seeds, per):
        rng = np.random.default_rng(sub_seed)
        best = 0.0
        for sid in range(count):
            f = _harness_field(grid, rng)
            g = _harness_field(grid, rng)
            fp = f.to_real()
            gp = g.to_real()
            prod = SpectralField.from_physical(grid, fp * gp)
            from .spectral import fftn, ifftn, apply_multiplier

            lhs = apply_multiplier(prod, abs_grad, "annihilate").to_physical()
            lhs_norm = lr_norm(lhs, 2.0, grid.cell_volume)
            grad_f = apply_multiplier(f, abs_grad, "annihilate").to_physical()
            grad_g = apply_multiplier(g, abs_grad, "annihilate").to_physical()
            rhs = lr_norm(fp, 4.0, grid.cell_volume) * lr_norm(
                grad_g, 4.0, grid.cell_volume
            ) + lr_norm(grad_f, 4.0, grid.cell_volume) * lr_norm(
                gp, 4.0, grid.cell_volume
            )
            if rhs == 0.0:
                skipped += 1
                continue
            ratio = lhs_norm / rhs
            best = max(best, ratio)
            rows.append((sub_seed, sid, lhs_norm, rhs, ratio))
        seed_maxima[sub_seed] = best
    return rows, skipped, seed_maxima, {}


class _FreeSampleTraj:
    """Free evolution of one state on a fixed sample comb (harness helper)."""

    def __init__(self, state, times):
        from .spectral import fftn, ifftn, free_propagate

        self.times = np.asarray(times, dtype=float)
        self.states = [free_propagate(state, float(t)) for t in self.times]


def _nonlinear_estimate_harness(samples, seed, d, n):
    grid = Grid(d, n, 2 * np.pi)
    bank = LPBank(grid)
    w_spec = NormSpec.w_norm(d)
    dual_spec = NormSpec.w_dual(d)
    times = np.linspace(0.0, 1.0, 5)
    e1 = 1.0 + 2.0 / (d - 1)
    e2 = (d - 3.0) / (d - 1.0)
    e3 = 2.0 / (d - 1.0)
    e4 = 4.0 / (d - 1.0)
    e5 = 2.0 * (d - 3.0) / (d - 1.0)
    rows, skipped = [], 0
    sub_seeds = [seed, seed + 1, seed + 2]
    per = [samples // 3] * 3
    per[0] += samples - sum(per)
    seed_maxima = {}
    for sub_seed, count in zip(sub_seeds, per):
        rng = np.random.default_rng(sub_seed)
        best = 0.0
        for sid in range(count):
            fu = _harness_field(grid, rng)
            fv = _harness_field(grid, rng)
            su = StateVec(grid, fu.to_real(), np.zeros(grid.shape))
            sv = StateVec(grid, fv.to_real(), np.zeros(grid.shape))
            tu = _FreeSampleTraj(su, times)
            tv = _FreeSampleTraj(sv, times)
            # lhs: ||u^2 v||_{[W]*} with the pointwise product per sample
            prod_vals = np.array(
                [
                    besov_norm(
                        bank,
                        SpectralField.from_physical(
                            grid, a.u**2 * b.u
                        ),
                        dual_spec.spatial(),
                    )
                    for a, b in zip(tu.states, tv.states)
                ]
            )
            lhs = _trapezoid_lq(times, prod_vals, dual_spec.q)
            wu = strichartz_norm(bank, tu, w_spec)
            wv = strichartz_norm(bank, tv, w_spec)
            hu = max(
                sobolev_norm(
                    SpectralField.from_physical(grid, st.u),
                    grid.s_c,
                    homogeneous=True,
                    zero_mode_policy="annihilate",
                )
                for st in tu.states
            )
            hv = max(
                sobolev_norm(
                    SpectralField.from_physical(grid, st.u),
                    grid.s_c,
                    homogeneous=True,
                    zero_mode_policy="annihilate",
                )
                for st in tv.states
            )
            rhs = wu**e1 * hu**e2 * wv**e3 * hv**e2 + wv * wu**e4 * hu**e5
            if rhs == 0.0:
                skipped += 1
                continue
            ratio = lhs / rhs
            best = max(best, ratio)
            rows.append((sub_seed, sid, lhs, rhs, ratio))
        seed_maxima[sub_seed] = best
    return rows, skipped, seed_maxima, {}


def _dispersive_decay_harness(samples, seed, d, n, box, t_grid=None):
    """sup-norm decay of the half-wave flow on wave-packet data.

    The packet carries a frequency offset so the bulk of its spectrum sits in
    the wave-like regime omega ~ |xi|, where the transverse stationary-phase
    decay rate is t^{-(d-1)/2} (the radial curvature (1+|xi|^2)^{-3/2} is too
    weak to matter on the sampled window).  The box is large enough that the
    ballistic packet does not wrap before the last sample time.
    """
    grid = Grid(d, n, box)
    if t_grid is None:
        t_grid = np.geomspace(1.0, 20.0, 9)
    target = -(d - 1) / 2.0
    rows, skipped = [], 0
    seed_maxima = {}
    exponents = []
    for k in range(samples):
        sub_seed = seed + k
        rng = np.random.default_rng(sub_seed)
        width = 0.65 + 0.1 * rng.uniform()
        carrier = np.zeros(d)
        carrier[0] = 2.9 + 0.2 * rng.uniform()
        env = gaussian_bump(grid, 1.0, width)
        phase = (grid.coords() * carrier.reshape((d,) + (1,) * d)).sum(axis=0)
        f = SpectralField.from_physical(grid, env * np.exp(1j * phase))
        sups = []
        best = 0.0
        for t in t_grid:
            out = half_wave(f, float(t))
            sup = float(np.abs(out.to_physical()).max())
            sups.append(sup)
            rhs = float(t) ** target
            ratio = sup / rhs
            best = max(best, ratio)
            rows.append((sub_seed, len(sups) - 1, sup, rhs, ratio))
        slope = np.polyfit(np.log(t_grid), np.log(sups), 1)[0]
        exponents.append(float(slope))
        seed_maxima[sub_seed] = best
    extra = {
        "fit_exponents": exponents,
        "target_exponent": target,
        "exponent_ok": bool(
            all(abs(e - target) <= 0.3 for e in exponents)
        ),
    }
    return rows, skipped, seed_maxima, extra


def inequality_harness(
    kind: str,
    samples: int,
    seed: int,
    d: int = 3,
    n: int = 16,
    box: float = 56.0,
) -> InequalityReport:
    """Randomized two-sided checks of the harmonic-analysis inequalities.

    kind: "product_rule", "nonlinear_estimate" or "dispersive_decay".
    Returns per-sample (lhs, rhs, ratio) rows, the max empirical constant and
    a PASS flag: every ratio finite and the per-seed maxima stable (+-50%).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if kind == "product_rule":
        rows, skipped, seed_maxima, extra = _product_rule_harness(samples, seed, d, n)
    elif kind == "nonlinear_estimate":
        rows, skipped, seed_maxima, extra = _nonlinear_estimate_harness(
            samples, seed, d, n
        )
    elif kind == "dispersive_decay":
        rows, skipped, seed_maxima, extra = _dispersive_decay_harness(
            samples, seed, d, max(n, 112), box
        )
    else:
        raise ValueError(f"unknown harness kind {kind!r}")
    ratios = np.array([r[4] for r in rows])
    finite = bool(np.all(np.isfinite(ratios))) if ratios.size else True
    max_ratio = float(ratios.max()) if ratios.size else 0.0
    passed = finite and _seed_stability(seed_maxima)
    if "exponent_ok" in extra:
        passed = passed and extra["exponent_ok"]
    return InequalityReport(
        kind=kind,
        samples=samples,
        skipped=skipped,
        rows=rows,
        max_ratio=max_ratio,
        seed_maxima=seed_maxima,
        passed=passed,
        extra=extra,
    )
