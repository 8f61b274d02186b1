import math

import numpy as np
import pytest

from kgflow.diagnostics import (
    DiagnosticsRecord,
    compactness_modulus,
    drift_check,
    energy,
    morawetz_cumulative,
    morawetz_integral,
    potential_concentration,
    scattering_detect,
    spatial_center,
    trajectory_records,
    _corner_cell_integral,
)
from kgflow.errors import InvalidStatus
from kgflow.lpbesov import pair_sobolev_norm
from kgflow.solver import SolveConfig, Trajectory, evolve
from kgflow.spectral import Grid, StateVec, free_propagate, gaussian_bump, single_mode


def _traj(grid, times, states, status="complete"):
    times = np.asarray(times, dtype=float)
    return Trajectory(
        grid=grid,
        times=times,
        states=states,
        status=status,
        duhamel_residual=np.zeros(max(len(times) - 1, 0)),
        step_times=times,
        step_energy=np.zeros(len(times)),
    )


def _free_traj(state, times, status="complete"):
    return _traj(
        state.grid, times, [free_propagate(state, float(t)) for t in times], status
    )


# ------------------------------------------------------------------- energy


def test_energy_zero_state():
    g = Grid(1, 16, 2 * np.pi)
    parts = energy(StateVec.zero(g))
    assert parts.total == 0.0


def test_energy_cosine_closed_form():
    # u = cos x, udot = 0 on [0, 2pi): E = 1/2 (int sin^2 + cos^2) + 1/4 int cos^4
    #   = pi + 3 pi / 16
    g = Grid(1, 64, 2 * np.pi)
    st = StateVec(g, single_mode(g, 1.0), np.zeros(g.shape))
    parts = energy(st)
    assert parts.total == pytest.approx(np.pi + 3 * np.pi / 16, rel=1e-12)
    assert parts.kinetic == 0.0
    assert parts.gradient == pytest.approx(np.pi / 2, rel=1e-12)
    assert parts.mass_part == pytest.approx(np.pi / 2, rel=1e-12)
    assert parts.potential == pytest.approx(3 * np.pi / 16, rel=1e-12)


def test_energy_even_in_udot():
    g = Grid(2, 16, 2 * np.pi)
    rng = np.random.default_rng(0)
    u = gaussian_bump(g, 0.7, 0.8)
    v = rng.standard_normal(g.shape)
    assert energy(StateVec(g, u, v)).total == energy(StateVec(g, u, -v)).total


def test_energy_parts_sum_and_nonneg():
    g = Grid(2, 16, 2 * np.pi)
    st = StateVec(g, gaussian_bump(g, 0.5, 0.8), gaussian_bump(g, 0.2, 1.0))
    parts = energy(st)
    total = parts.kinetic + parts.gradient + parts.mass_part + parts.potential
    assert parts.total == pytest.approx(total, rel=1e-12)
    for val in (parts.kinetic, parts.gradient, parts.mass_part, parts.potential):
        assert val >= 0.0


# ------------------------------------------------------------------- morawetz


def test_corner_cell_integral_2d_closed_form():
    # integral of 1/|x| over [0,1]^2 = 2 ln(1 + sqrt 2)
    assert _corner_cell_integral(2) == pytest.approx(
        2.0 * math.log(1.0 + math.sqrt(2.0)), rel=1e-8
    )


def test_corner_cell_integral_1d_diverges():
    with pytest.raises(ValueError):
        _corner_cell_integral(1)


def test_morawetz_zero_trajectory():
    g = Grid(2, 16, 8.0)
    times = np.linspace(0, 1, 5)
    traj = _traj(g, times, [StateVec.zero(g) for _ in times])
    assert morawetz_integral(traj, (0.0, 1.0)) == 0.0


def test_morawetz_translation_covariance():
    g = Grid(2, 32, 8.0)
    times = np.linspace(0, 0.5, 3)
    st = StateVec(g, gaussian_bump(g, 0.8, 0.7), np.zeros(g.shape))
    traj = _free_traj(st, times)
    base = morawetz_integral(traj, (0.0, 0.5), center=[0.0, 0.0])
    # shift both the fields and the center by one lattice vector
    shift_cells = 5
    shifted_states = [
        StateVec(g, np.roll(s.u, shift_cells, axis=0), np.roll(s.udot, shift_cells, axis=0))
        for s in traj.states
    ]
    traj2 = _traj(g, times, shifted_states)
    moved = morawetz_integral(
        traj2, (0.0, 0.5), center=[shift_cells * g.dx, 0.0]
    )
    assert moved == pytest.approx(base, rel=1e-12)


def test_morawetz_cumulative_nondecreasing():
    g = Grid(2, 16, 8.0)
    st = StateVec(g, gaussian_bump(g, 0.5, 0.7), np.zeros(g.shape))
    times = np.linspace(0, 2, 9)
    traj = _free_traj(st, times)
    cum = morawetz_cumulative(traj)
    assert cum[0] == 0.0
    assert np.all(np.diff(cum) >= 0.0)


# --------------------------------------------------------------- centroid


def test_spatial_center_bump_at_origin():
    g = Grid(2, 32, 8.0)
    st = StateVec(g, gaussian_bump(g, 1.0, 0.6), np.zeros(g.shape))
    res = spatial_center(st)
    assert not res.degenerate
    assert np.abs(res.center).max() <= g.dx


def test_spatial_center_equivariance():
    g = Grid(2, 32, 8.0)
    u = gaussian_bump(g, 1.0, 0.6)
    base = spatial_center(StateVec(g, u, np.zeros(g.shape))).center
    shift = 8  # cells along axis 0 (= L/4)
    moved = spatial_center(
        StateVec(g, np.roll(u, shift, axis=0), np.zeros(g.shape))
    ).center
    expect = base[0] + shift * g.dx
    expect = (expect + g.box_length / 2) % g.box_length - g.box_length / 2
    assert abs(moved[0] - expect) <= g.dx
    assert abs(moved[1] - base[1]) <= g.dx


def test_spatial_center_two_bump_degenerate():
    g = Grid(1, 64, 8.0)
    u = gaussian_bump(g, 1.0, 0.4, center=[-2.0]) + gaussian_bump(
        g, 1.0, 0.4, center=[2.0]
    )
    res = spatial_center(StateVec(g, u, np.zeros(g.shape)))
    assert res.degenerate
    assert res.resultant < 0.1


def test_spatial_center_zero_density():
    g = Grid(1, 16, 8.0)
    res = spatial_center(StateVec.zero(g))
    assert res.degenerate


# --------------------------------------------------------------- concentration


def test_potential_concentration_zero():
    g = Grid(1, 16, 8.0)
    times = np.linspace(0, 1, 5)
    traj = _traj(g, times, [StateVec.zero(g) for _ in times])
    assert potential_concentration(traj, 0.0, 1.0, math.inf) == 0.0


def test_potential_concentration_disperses():
    g = Grid(1, 128, 48.0)
    st = StateVec(g, gaussian_bump(g, 0.5, 1.0), np.zeros(g.shape))
    times = np.linspace(0, 12, 49)
    traj = _free_traj(st, times)
    vals = [
        potential_concentration(traj, t0, 2.0, math.inf) for t0 in (0.0, 5.0, 10.0)
    ]
    assert vals[0] > vals[1] > vals[2]


def test_potential_concentration_radius_inf_vs_half_box():
    # d=1: the ball of radius L/2 around the centroid is the whole box
    g = Grid(1, 64, 8.0)
    st = StateVec(g, gaussian_bump(g, 0.8, 0.5), np.zeros(g.shape))
    times = np.linspace(0, 0.5, 3)
    traj = _free_traj(st, times)
    full = potential_concentration(traj, 0.0, 0.5, math.inf)
    half = potential_concentration(traj, 0.0, 0.5, g.box_length / 2)
    assert half == pytest.approx(full, rel=1e-12)


# --------------------------------------------------------------- drift


def test_drift_static_bump():
    g = Grid(1, 64, 16.0)
    st = StateVec(g, gaussian_bump(g, 1.0, 0.8), np.zeros(g.shape))
    times = np.linspace(0, 3, 7)
    traj = _traj(g, times, [st.copy() for _ in times])
    rep = drift_check(traj)
    assert rep.implied_2cu == pytest.approx(0.0, abs=1e-12)


def test_drift_traveling_packet_below_light_speed():
    # group velocity |grad omega| = |xi|/omega < 1
    from test_lpbesov import traveling_packet_state

    g = Grid(1, 128, 48.0)
    st = traveling_packet_state(g, amplitude=0.5, width=1.5, carrier=2.0)
    times = np.linspace(0, 10, 21)
    traj = _free_traj(st, times)
    rep = drift_check(traj)
    assert rep.max_speed < 1.0
    assert np.isfinite(rep.implied_2cu)
    assert rep.implied_2cu >= 0.0


# --------------------------------------------------------------- compactness


def test_compactness_zero_trajectory():
    g = Grid(1, 64, 16.0)
    times = np.linspace(0, 1, 3)
    traj = _traj(g, times, [StateVec.zero(g) for _ in times])
    assert compactness_modulus(traj, 1e-6) == g.dx


def test_compactness_monotone_in_eta():
    g = Grid(1, 128, 32.0)
    st = StateVec(g, gaussian_bump(g, 1.0, 1.0), np.zeros(g.shape))
    traj = _traj(g, [0.0], [st])
    etas = [1e-1, 1e-3, 1e-5]
    radii = [compactness_modulus(traj, e) for e in etas]
    assert radii[0] <= radii[1] <= radii[2]


def test_compactness_dispersal_grows_frozen_stays():
    g = Grid(1, 128, 48.0)
    st = StateVec(g, gaussian_bump(g, 0.5, 1.0), np.zeros(g.shape))
    eta = 1e-4
    frozen = _traj(g, [0.0, 5.0], [st.copy(), st.copy()])
    short = _free_traj(st, np.linspace(0, 2, 5))
    long = _free_traj(st, np.linspace(0, 12, 25))
    c_frozen0 = compactness_modulus(_traj(g, [0.0], [st]), eta)
    assert compactness_modulus(frozen, eta) == c_frozen0
    assert compactness_modulus(long, eta) > compactness_modulus(short, eta)


# --------------------------------------------------------------- scattering


def test_scattering_free_trajectory():
    g = Grid(1, 64, 16.0)
    st = StateVec(g, gaussian_bump(g, 0.3, 1.0), np.zeros(g.shape))
    times = np.linspace(0, 12, 13)
    traj = _free_traj(st, times)
    rep = scattering_detect(traj, tol=1e-8)
    assert rep.verdict == "scatters"
    assert max(r for _, r in rep.cauchy_residuals) < 1e-9


def test_scattering_short_horizon_inconclusive():
    g = Grid(1, 64, 16.0)
    st = StateVec(g, gaussian_bump(g, 0.3, 1.0), np.zeros(g.shape))
    traj = _free_traj(st, np.linspace(0, 2, 5))
    rep = scattering_detect(traj, tol=1e-8)
    assert rep.verdict == "inconclusive"


def test_scattering_blowup_status_rejected():
    g = Grid(1, 64, 16.0)
    st = StateVec(g, gaussian_bump(g, 0.3, 1.0), np.zeros(g.shape))
    traj = _free_traj(st, np.linspace(0, 12, 5), status="blowup_suspected")
    with pytest.raises(InvalidStatus):
        scattering_detect(traj, tol=1e-8)


def test_scattering_nonlinear_small_data():
    g = Grid(1, 64, 32.0)
    st = StateVec(g, gaussian_bump(g, 1e-2, 1.0), np.zeros(g.shape))
    cfg = SolveConfig(dt=0.02, T=15.0, store_every=25)
    traj = evolve(st, cfg)
    assert traj.status == "complete"
    rep = scattering_detect(traj, tol=1e-4)
    assert rep.verdict == "scatters"


def test_pullback_limit_uniqueness():
    g = Grid(1, 64, 32.0)
    st = StateVec(g, gaussian_bump(g, 1e-2, 1.0), np.zeros(g.shape))
    lims = []
    for T in (12.0, 24.0):
        traj = evolve(st, SolveConfig(dt=0.02, T=T, store_every=25))
        lims.append(scattering_detect(traj, tol=1e-4).limit_state)
    dist = pair_sobolev_norm(lims[0] - lims[1], g.s_c)
    assert dist < 1e-4


# --------------------------------------------------------------- records


def test_trajectory_records_fields():
    g = Grid(2, 16, 8.0)
    st = StateVec(g, gaussian_bump(g, 0.4, 0.7), np.zeros(g.shape))
    times = np.linspace(0, 1, 5)
    traj = _free_traj(st, times)
    recs = trajectory_records(traj)
    assert len(recs) == len(times)
    for r in recs:
        total = r.kinetic + r.gradient + r.mass_part + r.potential
        assert r.energy == pytest.approx(total, rel=1e-12)
    cols = DiagnosticsRecord.csv_columns(g.dim)
    assert cols[-1] == "scatter_residual"
    assert len(recs[0].csv_row()) == len(cols)


def test_compactness_eta_validation():
    g = Grid(1, 16, 8.0)
    traj = _traj(g, [0.0], [StateVec.zero(g)])
    with pytest.raises(ValueError):
        compactness_modulus(traj, 0.0)
