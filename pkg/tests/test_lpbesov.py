import math

import numpy as np
import pytest
import scipy.fft as sfft

from kgflow.errors import CoverageError, RangeError, ZeroModeSingularity
from kgflow.lpbesov import (
    LOW,
    LPBank,
    NormSpec,
    besov_norm,
    inequality_harness,
    lp_project,
    lr_norm,
    pair_sobolev_norm,
    psi0_hat,
    psi_hat,
    sobolev_norm,
    strichartz_norm,
)
from kgflow.spectral import Grid, SpectralField, StateVec, free_propagate, gaussian_bump

from conftest import random_field, random_smooth_field


@pytest.fixture(scope="module")
def g2():
    return Grid(2, 32, 2 * np.pi)


@pytest.fixture(scope="module")
def bank2(g2):
    return LPBank(g2)


# --------------------------------------------------------------- bump symbols


def test_bump_supports():
    r = np.linspace(0, 5, 2001)
    psi = psi_hat(r)
    assert np.all(psi[r < 0.5] == 0.0)
    assert np.all(psi[r > 2.0] == 0.0)
    assert np.all((0.0 <= psi) & (psi <= 1.0))
    p0 = psi0_hat(r)
    assert np.all(p0[r <= 1.0] == 1.0)
    assert np.all(p0[r >= 2.0] == 0.0)


def test_partition_of_unity_on_lattice(g2, bank2):
    total = bank2.block_symbol(LOW).copy()
    for j in range(1, bank2.j_max + 1):
        total = total + bank2.block_symbol(j)
    assert np.abs(total - 1.0).max() <= 1e-12
    hom = sum(bank2.block_symbol(j) for j in bank2.homogeneous_blocks())
    defect = np.abs(hom - 1.0)
    defect[(0,) * g2.dim] = 0.0  # homogeneous family does not cover xi=0
    assert defect.max() <= 1e-12


def test_lp_project_support_disjointness(g2, bank2):
    # single mode at |xi| = 1.5 is inside block j=1, far outside j=5
    coeffs = np.zeros(g2.shape, dtype=complex)
    k = (0, 1)  # hmm: |xi|=1; use mode with norm ~1.5 instead
    coeffs[1, 1] = 1.0  # |xi| = sqrt(2) ~ 1.41
    f = SpectralField(g2, coeffs)
    assert lp_project(bank2, f, 1).coeffs[1, 1] != 0.0
    assert np.abs(lp_project(bank2, f, 5).coeffs).max() < 1e-14


def test_lp_project_range_error(g2, bank2):
    f = SpectralField.zero(g2)
    with pytest.raises(RangeError):
        lp_project(bank2, f, bank2.j_max + 1)
    with pytest.raises(RangeError):
        lp_project(bank2, f, bank2.j_min - 1)


def test_reconstruction_100_random_fields(g2, bank2):
    rng = np.random.default_rng(0)
    for _ in range(100):
        f = random_field(g2, rng)
        rec = lp_project(bank2, f, LOW).coeffs.copy()
        for j in range(1, bank2.j_max + 1):
            rec += lp_project(bank2, f, j).coeffs
        scale = np.abs(f.coeffs).max()
        assert np.abs(rec - f.coeffs).max() <= 1e-12 * scale


def test_almost_orthogonality(g2, bank2):
    rng = np.random.default_rng(1)
    f = random_field(g2, rng)
    for j in range(bank2.j_min, bank2.j_max - 1):
        twice = lp_project(bank2, lp_project(bank2, f, j), j + 2)
        assert np.abs(twice.coeffs).max() == 0.0


def test_bernstein_constant_stable():
    # ||Delta_j u||_inf <= C 2^{jd/2} ||Delta_j u||_2 with C stable across j.
    # The extremal fields are the block kernels themselves (point masses put
    # through Delta_j); random positions and weights exercise translation.
    g = Grid(2, 64, 2 * np.pi)
    bank = LPBank(g)
    rng = np.random.default_rng(2)
    consts = []
    for j in (1, 2, 3):
        ratios = []
        for _ in range(12):
            point = np.zeros(g.shape)
            idx = tuple(rng.integers(0, g.n_per_axis, size=g.dim))
            point[idx] = rng.uniform(0.5, 2.0)
            piece = lp_project(bank, SpectralField.from_physical(g, point), j)
            linf = np.abs(piece.to_physical()).max()
            l2 = piece.l2_norm()
            ratios.append(linf / l2 / 2 ** (j * g.dim / 2.0))
        consts.append(np.mean(ratios))
    mid = np.mean(consts)
    assert all(abs(c / mid - 1.0) <= 0.2 for c in consts)


# --------------------------------------------------------------- besov norms


def test_besov_zero_field(g2, bank2):
    assert besov_norm(bank2, SpectralField.zero(g2), NormSpec(s=1.0, r=2.0)) == 0.0


def test_besov_sobolev_equivalence(g2, bank2):
    rng = np.random.default_rng(3)
    spec = NormSpec(s=1.5, r=2.0)
    ratios = []
    for _ in range(100):
        f = random_field(g2, rng)
        ratios.append(besov_norm(bank2, f, spec) / sobolev_norm(f, 1.5))
    ratios = np.array(ratios)
    c = math.sqrt(ratios.max() * ratios.min())  # one recorded constant
    assert np.all(ratios <= c * 1.2) and np.all(ratios >= c / 1.2)


def test_besov_dyadic_weight_scaling(g2, bank2):
    # single dyadic mode at |xi| = 2^j: norm scales by 2^s per j increment
    s = 1.25
    spec = NormSpec(s=s, r=2.0)
    vals = []
    for j in (1, 2, 3):
        coeffs = np.zeros(g2.shape, dtype=complex)
        coeffs[2**j, 0] = 1.0
        vals.append(besov_norm(bank2, SpectralField(g2, coeffs), spec))
    for a, b in zip(vals, vals[1:]):
        assert b / a == pytest.approx(2.0**s, rel=0.05)


def test_besov_l2_comparison_constant(g2, bank2):
    rng = np.random.default_rng(4)
    spec = NormSpec(s=0.0, r=2.0)
    for _ in range(10):
        f = random_field(g2, rng)
        ratio = besov_norm(bank2, f, spec) / f.l2_norm()
        assert 1 / math.sqrt(2) <= ratio <= math.sqrt(2)


def test_homogeneous_besov_zero_mode_policy(g2, bank2):
    f = SpectralField.from_physical(g2, np.ones(g2.shape))
    with pytest.raises(ZeroModeSingularity):
        besov_norm(bank2, f, NormSpec(s=0.5, r=2.0, homogeneous=True))


def test_norm_spec_w_exponents():
    spec5 = NormSpec.w_norm(5)
    assert (spec5.q, spec5.r, spec5.s) == (3.0, 3.0, 1.0)
    dual5 = NormSpec.w_dual(5)
    assert dual5.q == pytest.approx(1.5)
    assert dual5.r == pytest.approx(1.5)
    with pytest.raises(ValueError):
        NormSpec.w_norm(1)
    with pytest.raises(ValueError):
        NormSpec(s=0.0, r=0.5)


def test_pair_sobolev_norm_zero():
    g = Grid(1, 16, 2 * np.pi)
    assert pair_sobolev_norm(StateVec.zero(g), 0.5) == 0.0


def test_lr_norm_inf():
    vals = np.array([1.0, -3.0, 2.0])
    assert lr_norm(vals, math.inf, 0.1) == 3.0


# --------------------------------------------------------------- strichartz


class _Traj:
    def __init__(self, grid, times, states):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.states = states


def _free_traj(state, times):
    return _Traj(state.grid, times, [free_propagate(state, t) for t in times])


@pytest.fixture(scope="module")
def g3():
    return Grid(3, 16, 8.0)


@pytest.fixture(scope="module")
def bank3(g3):
    return LPBank(g3)


def test_strichartz_zero_trajectory(g3, bank3):
    times = np.linspace(0, 1, 5)
    traj = _Traj(g3, times, [StateVec.zero(g3) for _ in times])
    assert strichartz_norm(bank3, traj, NormSpec.w_norm(3)) == 0.0


def test_strichartz_interval_monotonicity(g3, bank3):
    st = StateVec(g3, gaussian_bump(g3, 0.5, 1.0), np.zeros(g3.shape))
    times = np.linspace(0, 2, 9)
    traj = _free_traj(st, times)
    full = strichartz_norm(bank3, traj, NormSpec.w_norm(3, interval=(0.0, 2.0)))
    half = strichartz_norm(bank3, traj, NormSpec.w_norm(3, interval=(0.0, 1.0)))
    assert half <= full


def test_strichartz_coverage_error(g3, bank3):
    st = StateVec(g3, gaussian_bump(g3, 0.5, 1.0), np.zeros(g3.shape))
    traj = _free_traj(st, np.linspace(0, 1, 5))
    with pytest.raises(CoverageError):
        strichartz_norm(bank3, traj, NormSpec.w_norm(3, interval=(0.0, 3.0)))


def test_strichartz_positive_homogeneity(g3, bank3):
    rng = np.random.default_rng(5)
    st = StateVec(g3, random_smooth_field(g3, rng), np.zeros(g3.shape))
    times = np.linspace(0, 1, 5)
    traj = _free_traj(st, times)
    spec = NormSpec.w_norm(3)
    base = strichartz_norm(bank3, traj, spec)
    scaled = _Traj(g3, times, [2.5 * s for s in traj.states])
    assert strichartz_norm(bank3, scaled, spec) == pytest.approx(2.5 * base, rel=1e-12)


def traveling_packet_state(grid, amplitude=0.1, width=1.0, carrier=2.5):
    """One-way wave packet: the complex first-order variable is a carrier
    Gaussian, so the data disperses instead of pulsating in place."""
    x = grid.coords()
    phase = carrier * x[0]
    env = gaussian_bump(grid, amplitude, width)
    vec = SpectralField.from_physical(grid, env * np.exp(1j * phase))
    return StateVec.from_complex_form(vec)


def test_free_flow_w_norm_cauchy_increments():
    # growing horizon: the [W] norm is nondecreasing with decreasing increments
    g = Grid(3, 32, 16.0)
    bank = LPBank(g)
    st = traveling_packet_state(g)
    times = np.linspace(0.0, 6.0, 25)
    traj = _free_traj(st, times)
    horizons = [1.5, 3.0, 4.5, 6.0]
    vals = [
        strichartz_norm(bank, traj, NormSpec.w_norm(3, interval=(0.0, h)))
        for h in horizons
    ]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    increments = np.diff(vals)
    assert all(b <= a for a, b in zip(increments, increments[1:]))


# --------------------------------------------------------------- harness


def test_harness_validates_inputs():
    with pytest.raises(ValueError):
        inequality_harness("product_rule", 0, 1)
    with pytest.raises(ValueError):
        inequality_harness("unknown_kind", 1, 1)


def test_product_rule_closed_form_cosine():
    # d=1, s=1, f=g=cos(x) on L=2pi: |grad|(fg) = cos(2x), so
    # lhs = ||cos 2x||_2 = sqrt(pi); rhs = 2 ||cos||_4 ||cos||_4 = sqrt(3 pi)
    g = Grid(1, 64, 2 * np.pi)
    x = g.coords()[0]
    f = SpectralField.from_physical(g, np.cos(x))
    from kgflow.spectral import apply_multiplier

    prod = SpectralField.from_physical(g, np.cos(x) * np.cos(x))
    lhs_field = apply_multiplier(
        prod, lambda xi: np.sqrt((xi**2).sum(0)), "annihilate"
    )
    lhs = lr_norm(lhs_field.to_physical(), 2.0, g.cell_volume)
    grad_f = apply_multiplier(f, lambda xi: np.sqrt((xi**2).sum(0)), "annihilate")
    rhs = 2.0 * lr_norm(np.cos(x), 4.0, g.cell_volume) * lr_norm(
        grad_f.to_physical(), 4.0, g.cell_volume
    )
    assert lhs == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    assert rhs == pytest.approx(math.sqrt(3 * math.pi), rel=1e-12)
    assert lhs / rhs == pytest.approx(1.0 / math.sqrt(3.0), rel=1e-12)


def test_product_rule_harness_passes():
    rep = inequality_harness("product_rule", 60, seed=11)
    assert rep.passed
    assert rep.skipped == 0
    assert np.isfinite(rep.max_ratio) and rep.max_ratio > 0


def test_nonlinear_estimate_harness_passes():
    rep = inequality_harness("nonlinear_estimate", 24, seed=12)
    assert rep.passed
    assert np.isfinite(rep.max_ratio)


def test_dispersive_decay_harness_exponent():
    rep = inequality_harness("dispersive_decay", 2, seed=13)
    assert rep.passed
    for e in rep.extra["fit_exponents"]:
        assert abs(e - (-1.0)) <= 0.3


def test_harness_report_files(tmp_path):
    rep = inequality_harness("product_rule", 9, seed=14)
    csv_path = tmp_path / "rows.csv"
    json_path = tmp_path / "summary.json"
    rep.write_csv(csv_path)
    rep.write_json(json_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "kind,seed,sample_id,lhs,rhs,ratio"
    assert len(lines) == 1 + len(rep.rows)
    import json

    payload = json.loads(json_path.read_text())
    assert payload["pass"] is True
    assert payload["max_ratio"] == rep.max_ratio


def test_besov_rejects_spacetime_spec(g2, bank2):
    with pytest.raises(ValueError, match="spatial"):
        besov_norm(bank2, SpectralField.zero(g2), NormSpec.w_norm(2))


def test_strichartz_requires_q(g3, bank3):
    traj = _Traj(g3, [0.0, 1.0], [StateVec.zero(g3), StateVec.zero(g3)])
    with pytest.raises(ValueError, match="spec.q"):
        strichartz_norm(bank3, traj, NormSpec(s=0.0, r=2.0))
