"""Concentration bubbles: group action, synthetic sequences, greedy extraction.

The translate-and-rescale action T phi(x) = h^{-d/2} phi((x - x0)/h) is
realized exactly on the lattice for dyadic scales h = 2^{-j}: the field is
zero-padded onto the box (L * 2^j, n * 2^j) with the same grid spacing, the
big-box spectrum is an exact refinement of the small-box one, and reading the
small-box coefficients off the compressed big-box frequencies is the
spectral-domain dilation.  Shifts act as exact phase modulations, so no
interpolation error enters anywhere.  Isometry holds whenever the alias
guards pass, i.e. for fields that are spatially concentrated (padding loses
nothing) and spectrally within the shrunken band.

Sequence synthesis and greedy extraction mirror each other: synthesis sums
half-wave-evolved bubbles in the complex first-order variable; extraction
locates the strongest dyadic witness 2^{-jd/2} |Delta_j w(x)| on the last
element, estimates a profile by averaged pull-backs, and subtracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AliasError, OrthogonalityError
from .lpbesov import LPBank
from .spectral import Grid, SpectralField, StateVec, fftn, half_wave, ifftn


@dataclass(frozen=True)
class ProfileParams:
    """One concentration triple (t_shift, x_shift, scale); tau = -t/h."""

    t_shift: float
    x_shift: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(
            self, "x_shift", np.atleast_1d(np.asarray(self.x_shift, dtype=float))
        )
        if not 0.0 < self.scale <= 1.0:
            raise ValueError(f"scale must lie in (0, 1], got {self.scale}")

    @property
    def tau(self) -> float:
        return -self.t_shift / self.scale

    def ladder_index(self) -> int:
        """j with scale = 2^-j; ValueError for non-dyadic scales."""
        j = round(-math.log2(self.scale))
        if j < 0 or abs(self.scale - 2.0**-j) > 1e-12:
            raise ValueError(f"scale {self.scale} is not on the dyadic ladder")
        return j


def compose_params(outer: ProfileParams, inner: ProfileParams) -> ProfileParams:
    """Parameters of action(outer) after action(inner): the affine group law
    (h, x) -> (h2*h1, x2 + h2*x1), with the time shift composing the same way."""
    return ProfileParams(
        t_shift=outer.t_shift + outer.scale * inner.t_shift,
        x_shift=outer.x_shift + outer.scale * inner.x_shift,
        scale=outer.scale * inner.scale,
    )


def orthogonality_score(a: ProfileParams, b: ProfileParams) -> float:
    """h/h' + h'/h + (|dt| + |dx|)/min(h, h'); divergence along a track is
    the asymptotic-orthogonality criterion."""
    ratio = a.scale / b.scale + b.scale / a.scale
    sep = abs(a.t_shift - b.t_shift) + float(
        np.linalg.norm(a.x_shift - b.x_shift)
    )
    return ratio + sep / min(a.scale, b.scale)


def tracks_diverge(track_a, track_b, n_values=None, min_slope=0.5) -> bool:
    """Log-log slope test of the pairwise score along the sequence index."""
    scores = np.array(
        [orthogonality_score(a, b) for a, b in zip(track_a, track_b)]
    )
    if len(scores) < 2:
        return False
    n_values = (
        np.arange(1, len(scores) + 1) if n_values is None else np.asarray(n_values)
    )
    slope = np.polyfit(np.log(n_values), np.log(scores), 1)[0]
    return bool(slope > min_slope)


def _modulation(grid: Grid, x_shift) -> np.ndarray:
    phase = (grid.xi * np.asarray(x_shift).reshape((grid.dim,) + (1,) * grid.dim)).sum(
        axis=0
    )
    return np.exp(-1j * phase)


def _band_slices(n_small: int, n_big: int):
    """Index map embedding the small fft band into the big fft band."""
    half = n_small // 2
    src_lo = slice(0, half)
    src_hi = slice(n_small - half, n_small)
    dst_lo = slice(0, half)
    dst_hi = slice(n_big - half, n_big)
    return (src_lo, src_hi), (dst_lo, dst_hi)


def _embed_band(small: np.ndarray, big_shape) -> np.ndarray:
    """Place small-band coefficients at the matching signed frequencies of a
    larger lattice (inverse of _extract_band)."""
    d = small.ndim
    n_small = small.shape[0]
    n_big = big_shape[0]
    out = np.zeros(big_shape, dtype=complex)
    (s_lo, s_hi), (d_lo, d_hi) = _band_slices(n_small, n_big)
    for mask in range(2**d):
        src = tuple(s_hi if (mask >> a) & 1 else s_lo for a in range(d))
        dst = tuple(d_hi if (mask >> a) & 1 else d_lo for a in range(d))
        out[dst] = small[src]
    return out


def _extract_band(big: np.ndarray, small_shape) -> np.ndarray:
    d = big.ndim
    n_small = small_shape[0]
    n_big = big.shape[0]
    out = np.zeros(small_shape, dtype=complex)
    (s_lo, s_hi), (d_lo, d_hi) = _band_slices(n_small, n_big)
    for mask in range(2**d):
        src = tuple(s_hi if (mask >> a) & 1 else s_lo for a in range(d))
        dst = tuple(d_hi if (mask >> a) & 1 else d_lo for a in range(d))
        out[src] = big[dst]
    return out


def _band_mass_outside(coeffs: np.ndarray, keep_half: int) -> float:
    """Relative coefficient mass at modes with any |k_axis| >= keep_half."""
    d = coeffs.ndim
    n = coeffs.shape[0]
    k1 = np.rint(np.fft.fftfreq(n, d=1.0 / n)).astype(int)
    keep1 = np.abs(k1) < keep_half
    keep = np.ones(coeffs.shape, dtype=bool)
    for ax in range(d):
        sl = [None] * d
        sl[ax] = slice(None)
        keep &= keep1[tuple(sl)]
    total = float((np.abs(coeffs) ** 2).sum())
    if total == 0.0:
        return 0.0
    out = float((np.abs(coeffs[~keep]) ** 2).sum())
    return math.sqrt(out / total)


ALIAS_TOL = 1e-6


def apply_group_action(
    fld: SpectralField,
    params: ProfileParams,
    inverse: bool = False,
    strict: bool = True,
) -> SpectralField:
    """L2-isometric translate-and-rescale, exact in the Fourier domain.

    Forward: shrink by the dyadic scale, then shift.  Inverse: unshift, then
    expand.  With ``strict`` the alias guards raise AliasError when the field
    is not representable after rescaling (spectral tail for the shrink,
    out-of-box mass for the expansion); extraction passes strict=False and
    accepts the projection loss.
    """
    grid = fld.grid
    j = params.ladder_index()
    if params.scale < 2.0 / grid.n_per_axis:
        raise AliasError(
            f"scale {params.scale} below the resolvable limit 2/n"
        )
    if j == 0:
        if inverse:
            return SpectralField(
                grid, fld.coeffs * np.conj(_modulation(grid, params.x_shift))
            )
        return SpectralField(grid, fld.coeffs * _modulation(grid, params.x_shift))

    factor = 2**j
    n, L = grid.n_per_axis, grid.box_length
    big_shape = (n * factor,) * grid.dim
    amp = 2.0 ** (j * grid.dim / 2.0)

    if not inverse:
        # pad physically onto the big box; its spectrum refines the small one
        phys = fld.to_physical()
        if strict:
            # mass near the box edge is lost by padding (one-copy semantics)
            edge = _edge_mass(phys, grid)
            if edge > ALIAS_TOL:
                raise AliasError(
                    f"field carries {edge:.2e} relative mass at the box edge; "
                    "not representable as a single concentrated copy"
                )
        big = np.zeros(big_shape, dtype=complex)
        lo = (n * factor - n) // 2
        big[tuple(slice(lo, lo + n) for _ in range(grid.dim))] = phys
        big_hat = fftn(big)
        if strict:
            tail = _band_mass_outside(big_hat, n // 2)
            if tail > ALIAS_TOL:
                raise AliasError(
                    f"rescaled bandwidth exceeds the lattice "
                    f"(relative tail {tail:.2e})"
                )
        coeffs = _extract_band(big_hat, grid.shape) / amp
        coeffs[grid.nyquist_mask] = 0.0
        out = SpectralField(grid, coeffs * _modulation(grid, params.x_shift))
        return out

    # inverse: undo the shift, then expand by embedding into the big lattice
    coeffs = fld.coeffs * np.conj(_modulation(grid, params.x_shift))
    big_hat = _embed_band(coeffs * amp, big_shape)
    big = ifftn(big_hat)
    lo = (n * factor - n) // 2
    crop = tuple(slice(lo, lo + n) for _ in range(grid.dim))
    phys = big[crop]
    if strict:
        total = float((np.abs(big) ** 2).sum())
        kept = float((np.abs(phys) ** 2).sum())
        if total > 0 and math.sqrt(max(total - kept, 0.0) / total) > ALIAS_TOL:
            raise AliasError("expanded field does not fit inside the box")
    return SpectralField.from_physical(grid, phys)


def _edge_mass(phys: np.ndarray, grid: Grid) -> float:
    """Relative L2 mass in the outermost cell shell of the box."""
    total = float((np.abs(phys) ** 2).sum())
    if total == 0.0:
        return 0.0
    inner = phys[tuple(slice(1, -1) for _ in range(grid.dim))]
    inner_mass = float((np.abs(inner) ** 2).sum())
    return math.sqrt(max(total - inner_mass, 0.0) / total)


# -- synthesis ---------------------------------------------------------------------


def synth_sequence(
    profiles,
    param_tracks,
    noise_amp: float,
    seed: int,
    n_values=None,
):
    """Emit sum_j exp(i <grad> (-t_n^j)) T_n^j phi^j + noise as StateVecs.

    ``profiles`` are complex first-order fields (one SpectralField per
    bubble); ``param_tracks[j][i]`` is the parameter triple of bubble j at
    sequence position i.  Tracks must be pairwise divergent in the
    orthogonality score; the generator refuses non-orthogonal ground truth.
    """
    if len(profiles) != len(param_tracks):
        raise ValueError("one parameter track per profile is required")
    for a in range(len(param_tracks)):
        for b in range(a + 1, len(param_tracks)):
            if not tracks_diverge(param_tracks[a], param_tracks[b], n_values):
                raise OrthogonalityError(
                    f"tracks {a} and {b} fail the divergence precondition"
                )
    lengths = {len(t) for t in param_tracks}
    if len(lengths) > 1:
        raise ValueError("all parameter tracks must have the same length")
    grid = profiles[0].grid if profiles else None
    if grid is None:
        raise ValueError("at least one profile is required")
    rng = np.random.default_rng(seed)
    length = lengths.pop()
    out = []
    for i in range(length):
        acc = SpectralField.zero(grid)
        for phi, track in zip(profiles, param_tracks):
            p = track[i]
            bubble = apply_group_action(phi, p)
            acc = acc + half_wave(bubble, -p.t_shift)
        if noise_amp > 0:
            noise = noise_amp * (
                rng.standard_normal(grid.shape)
                + 1j * rng.standard_normal(grid.shape)
            ) / math.sqrt(2.0)
            acc = acc + SpectralField.from_physical(grid, noise)
        out.append(StateVec.from_complex_form(acc))
    return out


def decoupling_defect(total: SpectralField, parts) -> float:
    """|  ||total||^2 - sum ||part||^2 | / ||total||^2 (L2)."""
    tot = total.l2_norm() ** 2
    if tot == 0.0:
        return 0.0
    acc = sum(p.l2_norm() ** 2 for p in parts)
    return abs(tot - acc) / tot


# -- extraction --------------------------------------------------------------------


@dataclass
class ProfileEntry:
    profile: SpectralField
    params: list  # ProfileParams per sequence element
    witness: float

    def l2_mass(self) -> float:
        return self.profile.l2_norm()


@dataclass
class Decomposition:
    profiles: list
    remainders: list
    defects: np.ndarray  # per sequence element
    k: int
    saturated: bool
    inputs_l2: np.ndarray

    def report(self) -> dict:
        return {
            "schema": 1,
            "k": self.k,
            "saturated": self.saturated,
            "profiles": [
                {
                    "ladder_index": entry.params[-1].ladder_index(),
                    "scale": entry.params[-1].scale,
                    "shift": [float(x) for x in entry.params[-1].x_shift],
                    "l2_mass": entry.l2_mass(),
                    "witness": entry.witness,
                }
                for entry in self.profiles
            ],
            "decoupling_defect": [float(x) for x in self.defects],
        }


def _peak_location(grid: Grid, piece: np.ndarray, idx) -> np.ndarray:
    """Grid argmax refined per axis by 3-point parabolic interpolation;
    the correction never exceeds half a cell."""
    x = np.array([grid.x1[i] for i in idx], dtype=float)
    n = grid.n_per_axis
    for ax in range(grid.dim):
        lo = list(idx)
        hi = list(idx)
        lo[ax] = (idx[ax] - 1) % n
        hi[ax] = (idx[ax] + 1) % n
        m_minus = float(piece[tuple(lo)])
        m_0 = float(piece[tuple(idx)])
        m_plus = float(piece[tuple(hi)])
        denom = m_minus - 2.0 * m_0 + m_plus
        if denom < 0.0:
            shift = 0.5 * (m_minus - m_plus) / denom
            x[ax] += float(np.clip(shift, -0.5, 0.5)) * grid.dx
    return x


def _witness_search(bank: LPBank, w: SpectralField, j_range):
    """argmax over (dyadic block, grid point) of 2^{-jd/2} |Delta_j w(x)|."""
    grid = w.grid
    best = (-1.0, None, None)
    for j in j_range:
        piece = np.abs(ifftn(w.coeffs * bank.block_symbol(j)))
        idx = np.unravel_index(np.argmax(piece), piece.shape)
        val = 2.0 ** (-j * grid.dim / 2.0) * float(piece[idx])
        if val > best[0]:
            best = (val, j, idx)
    val, j, idx = best
    x = np.array([grid.x1[i] for i in idx])
    return val, j, x


def extract_profiles(
    sequence, k_max: int, threshold: float, window_radius: float | None = None
) -> Decomposition:
    """Greedy bubble extraction from a fixed-time snapshot sequence.

    Stage loop: find the strongest witness (block j*, point x*) on the last
    element's remainder; per element, locate the same block's peak for the
    shift; estimate the profile by pulling back the tail elements (where the
    parameter tracks are most separated) and keeping the mass within
    ``window_radius`` of the pullback center; subtract the re-synthesized
    bubble everywhere; stop when the witness falls below ``threshold`` or
    k_max profiles are out (saturated flag).  Extraction operates in the
    complex first-order variable with time shifts fixed to zero.
    """
    if not sequence:
        raise ValueError("sequence must be nonempty")
    grid = sequence[0].grid
    bank = LPBank(grid)
    if window_radius is None:
        window_radius = grid.box_length / 4.0
    window = (grid.periodic_distance(np.zeros(grid.dim)) <= window_radius).astype(
        float
    )
    remainders = [st.to_complex_form() for st in sequence]
    inputs_l2 = np.array([w.l2_norm() for w in remainders])
    j_hi = min(bank.j_max, int(math.log2(grid.n_per_axis / 2.0)))
    j_range = [j for j in range(0, j_hi + 1) if j >= bank.j_min]
    tail = max(1, len(remainders) // 3)
    entries = []
    saturated = False
    for _ in range(k_max):
        witness, j_star, _ = _witness_search(bank, remainders[-1], j_range)
        if witness < threshold:
            break
        scale = 2.0**-j_star
        params = []
        for w in remainders:
            piece = np.abs(ifftn(w.coeffs * bank.block_symbol(j_star)))
            idx = np.unravel_index(np.argmax(piece), piece.shape)
            x_star = _peak_location(grid, piece, idx)
            params.append(ProfileParams(t_shift=0.0, x_shift=x_star, scale=scale))
        mean = None
        for w, p in zip(remainders[-tail:], params[-tail:]):
            pb = apply_group_action(w, p, inverse=True, strict=False)
            pb = SpectralField.from_physical(grid, pb.to_physical() * window)
            mean = pb if mean is None else mean + pb
        phi = (1.0 / tail) * mean
        for i, (w, p) in enumerate(zip(remainders, params)):
            bubble = apply_group_action(phi, p, strict=False)
            remainders[i] = w - bubble
        entries.append(ProfileEntry(profile=phi, params=params, witness=witness))
    else:
        witness, _, _ = _witness_search(bank, remainders[-1], j_range)
        saturated = witness >= threshold
    defects = np.zeros(len(remainders))
    for i, w0 in enumerate(remainders):
        tot = inputs_l2[i] ** 2
        if tot == 0.0:
            continue
        acc = w0.l2_norm() ** 2
        for entry in entries:
            acc += apply_group_action(
                entry.profile, entry.params[i], strict=False
            ).l2_norm() ** 2
        defects[i] = abs(tot - acc) / tot
    return Decomposition(
        profiles=entries,
        remainders=remainders,
        defects=defects,
        k=len(entries),
        saturated=saturated,
        inputs_l2=inputs_l2,
    )
