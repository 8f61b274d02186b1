"""Time integration of the cubic Klein-Gordon flow.

Two independent discretizations of the same integral equation:

* ``evolve`` steps with the exact free flow plus a trapezoidal Duhamel
  correction (a trigonometric, Gautschi-type integrator).  Because the
  right-endpoint kernel sin(0)/omega vanishes, the u-update is explicit and
  the pair update is exactly time-reversible; energy drift stays bounded.
* ``picard_local_solve`` iterates the Duhamel contraction map on a fixed time
  mesh with composite-trapezoid quadrature from 0 to each node.

Both record Duhamel residuals measured with an independent Simpson
quadrature: ``evolve`` on rolling windows at a stride that resolves the
fastest retained mode, ``picard_local_solve`` post hoc over its mesh.

Every integrator step maps physical float64 arrays to physical float64
arrays with no cross-step caches, so checkpoint/restart is bit-compatible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ContractionFailure, CoverageError, GridMismatchError
from .lpbesov import LPBank, NormSpec, sobolev_norm, strichartz_norm
from .spectral import (
    Grid,
    SpectralField,
    StateVec,
    fftn,
    free_propagate,
    ifftn,
    load_snapshot,
    save_snapshot,
)
from . import diagnostics

STATUS_COMPLETE = "complete"
STATUS_BLOWUP = "blowup_suspected"
STATUS_TOLERANCE = "tolerance_fail"


@dataclass
class SolveConfig:
    dt: float
    T: float
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    blowup_norm_cap: float = 1e6
    dealias: bool = True
    store_every: int = 1
    residual_every: int | None = None  # default: auto from dt*omega_max
    duhamel_tol: float = 1e-3
    nonlinearity_sign: float = 1.0  # +1 defocusing; -1 is a blowup test fixture

    def validate(self, grid: Grid):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if self.dt * grid.omega_max > 0.5 + 1e-12:
            raise ValueError(
                f"dt={self.dt} does not resolve the fastest mode: "
                f"dt*omega_max={self.dt * grid.omega_max:.3f} > 0.5"
            )
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")
        if self.residual_every is not None and self.residual_every < 1:
            raise ValueError("residual_every must be >= 1")

    def residual_stride(self, grid: Grid) -> int:
        """Simpson residual windows must resolve the fastest retained mode;
        auto-stride keeps stride*dt*omega_max <= 0.25."""
        if self.residual_every is not None:
            return self.residual_every
        return max(1, int(0.25 / (self.dt * grid.omega_max)))

    def replace(self, **kw) -> "SolveConfig":
        data = asdict(self)
        data.update(kw)
        return SolveConfig(**data)


@dataclass
class Trajectory:
    """Stored samples of one run plus per-segment Duhamel residuals.

    The "strong solution" certificate at finite resolution is the residual of
    the integral equation under independent quadrature, recorded per stored
    segment; status ``complete`` means every segment is below cfg.duhamel_tol.
    """

    grid: Grid
    times: np.ndarray
    states: list
    status: str
    duhamel_residual: np.ndarray
    step_times: np.ndarray = None
    step_energy: np.ndarray = None
    step_index0: int = 0
    cfg: SolveConfig = None
    extra: dict = field(default_factory=dict)

    def final_state(self) -> StateVec:
        return self.states[-1]

    def sample_stride_seconds(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


def _nonlinearity(grid: Grid, u_hat: np.ndarray, cfg: SolveConfig) -> np.ndarray:
    """Spectral coefficients of sign*u^3, cubed pseudospectrally with the
    2/3-rule projection applied to both input and output."""
    if cfg.dealias:
        u_phys = ifftn(np.where(grid.dealias_mask, u_hat, 0.0)).real
    else:
        u_phys = ifftn(u_hat).real
    f_hat = fftn((cfg.nonlinearity_sign * u_phys**3).astype(complex))
    if cfg.dealias:
        f_hat = np.where(grid.dealias_mask, f_hat, 0.0)
    f_hat[grid.nyquist_mask] = 0.0
    return f_hat


class _Stepper:
    """One trapezoidal-Duhamel step of size dt.

    The step consumes and produces physical float64 arrays with no cross-step
    caches, so restarted runs reproduce straight runs bit for bit.
    """

    def __init__(self, grid: Grid, cfg: SolveConfig):
        omega = grid.omega
        tw = cfg.dt * omega
        self.grid = grid
        self.cfg = cfg
        self.C = np.cos(tw)
        self.S = cfg.dt * np.sinc(tw / np.pi)
        self.wS = omega * np.sin(tw)
        self.half = 0.5 * cfg.dt
        sc = grid.s_c
        bessel = 1.0 + grid.xi_sq
        self._w_spec = grid.box_length**grid.dim / grid.npoints**2
        self._sob_hi = bessel**sc
        self._sob_lo = bessel ** (sc - 1.0)

    def advance(self, u_hat, v_hat):
        g, cfg = self.grid, self.cfg
        f0 = _nonlinearity(g, u_hat, cfg)
        u_hat_new = self.C * u_hat + self.S * v_hat - self.half * self.S * f0
        u_hat_new[g.nyquist_mask] = 0.0
        f1 = _nonlinearity(g, u_hat_new, cfg)
        v_hat_new = (
            -self.wS * u_hat + self.C * v_hat - self.half * (self.C * f0 + f1)
        )
        v_hat_new[g.nyquist_mask] = 0.0
        return ifftn(u_hat_new).real, ifftn(v_hat_new).real

    def __call__(self, u: np.ndarray, v: np.ndarray):
        return self.advance(fftn(u.astype(complex)), fftn(v.astype(complex)))

    def spectral_diag(self, u_hat, v_hat, u, v):
        """(total energy, pair H^{s_c} norm) from data already transformed."""
        g, w = self.grid, self._w_spec
        au2 = np.abs(u_hat) ** 2
        av2 = np.abs(v_hat) ** 2
        kinetic = 0.5 * w * float(av2.sum())
        gradient = 0.5 * w * float((g.xi_sq * au2).sum())
        mass_part = 0.5 * g.mass * w * float(au2.sum())
        potential = (
            self.cfg.nonlinearity_sign * 0.25 * g.cell_volume * float((u**4).sum())
        )
        pair = math.sqrt(
            w * float((self._sob_hi * au2).sum() + (self._sob_lo * av2).sum())
        )
        return kinetic + gradient + mass_part + potential, pair


class _ResidualChecker:
    """Rolling Simpson check of the integral equation on sample triples.

    Given states at t, t+h, t+2h it replugs them into the Duhamel formula with
    Simpson quadrature, which is independent of the integrator's per-step
    trapezoid.  The flow arrays for h and 2h are precomputed once.
    """

    def __init__(self, grid: Grid, cfg: SolveConfig, h: float, state0: StateVec):
        self.grid = grid
        self.cfg = cfg
        self.h = h
        w = grid.cell_volume
        # u-defect in L2 plus the window-weighted udot-defect: the mix scales
        # homogeneously under the massless rescaling symmetry
        self.scale = max(
            math.sqrt(w * float((state0.u**2).sum()))
            + 2 * h * math.sqrt(w * float((state0.udot**2).sum())),
            1e-30,
        )
        omega = grid.omega
        self._flows = {}
        for t in (h, 2 * h):
            tw = t * omega
            self._flows[t] = (np.cos(tw), t * np.sinc(tw / np.pi), omega * np.sin(tw))

    def _propagate(self, u_hat, v_hat, t):
        C, S, wS = self._flows[t]
        return C * u_hat + S * v_hat, -wS * u_hat + C * v_hat

    def residual(self, triple) -> float:
        (ua, va), (um, vm), (ub, vb) = triple
        g, cfg, h = self.grid, self.cfg, self.h
        fu_hat = fftn(ua.astype(complex))
        fv_hat = fftn(va.astype(complex))
        fa = _nonlinearity(g, fu_hat, cfg)
        fm = _nonlinearity(g, fftn(um.astype(complex)), cfg)
        fb = _nonlinearity(g, fftn(ub.astype(complex)), cfg)
        zero = np.zeros(g.shape, dtype=complex)
        pu, pv = self._propagate(fu_hat, fv_hat, 2 * h)
        qa_u, qa_v = self._propagate(zero, fa, 2 * h)
        qm_u, qm_v = self._propagate(zero, fm, h)
        w = h / 3.0
        pred_u = pu - w * (qa_u + 4 * qm_u)  # f(b) does not enter u: K(0)=0
        pred_v = pv - w * (qa_v + 4 * qm_v + fb)
        du = ifftn(pred_u).real - ub
        dv = ifftn(pred_v).real - vb
        w = g.cell_volume
        dist = math.sqrt(w * float((du**2).sum())) + 2 * h * math.sqrt(
            w * float((dv**2).sum())
        )
        return dist / self.scale


def duhamel_residuals(traj: Trajectory, cfg: SolveConfig = None) -> np.ndarray:
    """Per-segment relative residual of the integral equation.

    Each pair of adjacent stored segments is replugged into the Duhamel
    formula with Simpson quadrature (the midpoint is the stored sample), an
    independent check of the integrator's per-step trapezoid.  Segment i gets
    the smallest residual among the windows containing it.
    """
    cfg = cfg or traj.cfg
    grid = traj.grid
    times = np.asarray(traj.times, dtype=float)
    nseg = len(times) - 1
    if nseg < 1:
        return np.zeros(0)
    res = np.full(nseg, np.inf)
    if nseg == 1:
        # single segment: trapezoid check only (kernel kills the endpoint)
        h = times[1] - times[0]
        a, b = traj.states[0], traj.states[1]
        fa = _rhs_state(grid, a, cfg)
        free = free_propagate(a, h)
        corr = free_propagate(fa, h) * (h / 2.0)
        fb = _rhs_state(grid, b, cfg)
        pred_u = free.u - corr.u
        pred_v = free.udot - corr.udot - (h / 2.0) * fb.udot
        r = _weighted_dist(grid, b, pred_u, pred_v, h) / _residual_scale(
            traj.states[0], h
        )
        return np.array([r])
    for i in range(nseg - 1):
        h = times[i + 1] - times[i]
        a, mid, b = traj.states[i], traj.states[i + 1], traj.states[i + 2]
        fa = _rhs_state(grid, a, cfg)
        fm = _rhs_state(grid, mid, cfg)
        fb = _rhs_state(grid, b, cfg)
        free = free_propagate(a, 2 * h)
        # Simpson over [0, 2h] of V0(2h - s) (0, f(u(s)))
        qa = free_propagate(fa, 2 * h)
        qm = free_propagate(fm, h)
        w = h / 3.0
        pred_u = free.u - w * (qa.u + 4 * qm.u)  # fb contributes 0 to u (K(0)=0)
        pred_v = free.udot - w * (qa.udot + 4 * qm.udot + fb.udot)
        r = _weighted_dist(grid, b, pred_u, pred_v, h) / _residual_scale(
            traj.states[0], h
        )
        res[i] = min(res[i], r)
        res[i + 1] = min(res[i + 1], r)
    return res


def _rhs_state(grid, state, cfg):
    """(0, f(u)) packaged as a StateVec for propagation in the residual check."""
    f_hat = _nonlinearity(grid, fftn(state.u.astype(complex)), cfg)
    return StateVec(grid, np.zeros(grid.shape), ifftn(f_hat).real)


def _weighted_dist(grid, state, u, v, h) -> float:
    w = grid.cell_volume
    return math.sqrt(w * float(((state.u - u) ** 2).sum())) + 2 * h * math.sqrt(
        w * float(((state.udot - v) ** 2).sum())
    )


def _residual_scale(state, h) -> float:
    w = state.grid.cell_volume
    return max(
        math.sqrt(w * float((state.u**2).sum()))
        + 2 * h * math.sqrt(w * float((state.udot**2).sum())),
        1e-30,
    )


def evolve(state0: StateVec, cfg: SolveConfig, step_index0: int = 0) -> Trajectory:
    """Advance (u, udot) over [0, T] with the trigonometric integrator.

    Records energy at every integrator step and stores the state every
    ``cfg.store_every`` steps (the final step is always stored).  A pair
    Sobolev norm above cfg.blowup_norm_cap truncates the run with status
    blowup_suspected.
    """
    grid = state0.grid
    cfg.validate(grid)
    stepper = _Stepper(grid, cfg)
    nsteps = int(round(cfg.T / cfg.dt))
    u, v = state0.u.copy(), state0.udot.copy()
    times = [step_index0 * cfg.dt]
    states = [StateVec(grid, u.copy(), v.copy())]
    step_times = [step_index0 * cfg.dt]
    step_energy = []
    status = STATUS_COMPLETE
    res_stride = cfg.residual_stride(grid)
    checker = _ResidualChecker(grid, cfg, res_stride * cfg.dt, state0)
    # Residual windows start after the first stride: the raw initial data may
    # carry Nyquist content that the band-limited flow drops by design.
    res_buffer = []
    residuals = []
    collect_residuals = nsteps >= 3 * res_stride
    for k in range(1, nsteps + 1):
        u_hat = fftn(u.astype(complex))
        v_hat = fftn(v.astype(complex))
        e, pair = stepper.spectral_diag(u_hat, v_hat, u, v)
        step_energy.append(e)
        if not np.isfinite(pair) or pair > cfg.blowup_norm_cap:
            status = STATUS_BLOWUP
            break
        u, v = stepper.advance(u_hat, v_hat)
        t = (step_index0 + k) * cfg.dt
        step_times.append(t)
        if k % cfg.store_every == 0 or k == nsteps:
            times.append(t)
            states.append(StateVec(grid, u.copy(), v.copy()))
        if collect_residuals and k % res_stride == 0:
            res_buffer.append((u.copy(), v.copy()))
            if len(res_buffer) == 3:
                residuals.append(checker.residual(res_buffer))
                res_buffer = [res_buffer[-1]]
    if status == STATUS_COMPLETE:
        u_hat = fftn(u.astype(complex))
        v_hat = fftn(v.astype(complex))
        e, pair = stepper.spectral_diag(u_hat, v_hat, u, v)
        step_energy.append(e)
        if not np.isfinite(pair) or pair > cfg.blowup_norm_cap:
            status = STATUS_BLOWUP
    traj = Trajectory(
        grid=grid,
        times=np.array(times),
        states=states,
        status=status,
        duhamel_residual=np.array(residuals),
        step_times=np.array(step_times),
        step_energy=np.array(step_energy),
        step_index0=step_index0,
        cfg=cfg,
    )
    if status == STATUS_COMPLETE and traj.duhamel_residual.size == 0:
        traj.duhamel_residual = duhamel_residuals(traj, cfg)
    if (
        status == STATUS_COMPLETE
        and traj.duhamel_residual.size
        and traj.duhamel_residual.max() > cfg.duhamel_tol
    ):
        traj.status = STATUS_TOLERANCE
    return traj


def concat_trajectories(a: Trajectory, b: Trajectory) -> Trajectory:
    if not a.grid.compatible(b.grid):
        raise GridMismatchError("cannot concatenate trajectories on different grids")
    return Trajectory(
        grid=a.grid,
        times=np.concatenate([a.times, b.times[1:]]),
        states=a.states + b.states[1:],
        status=b.status,
        duhamel_residual=np.concatenate([a.duhamel_residual, b.duhamel_residual]),
        step_times=np.concatenate([a.step_times, b.step_times[1:]]),
        step_energy=np.concatenate([a.step_energy, b.step_energy[1:]]),
        step_index0=a.step_index0,
        cfg=a.cfg,
        extra={**a.extra, **b.extra},
    )


def continue_maximal(state0: StateVec, cfg: SolveConfig, horizon: float) -> Trajectory:
    """Run ``evolve`` in restartable segments up to ``horizon``.

    On blowup_suspected the offending segment is retried once at dt/2;
    persisting blowup is a terminal status, not an error.
    """
    grid = state0.grid
    seg_T = min(cfg.T, horizon)
    traj = None
    state = state0
    t_done = 0.0
    step0 = 0
    while t_done < horizon - 1e-12:
        this_T = min(seg_T, horizon - t_done)
        seg_cfg = cfg.replace(T=this_T)
        seg = evolve(state, seg_cfg, step_index0=step0)
        if seg.status == STATUS_BLOWUP:
            retry_cfg = seg_cfg.replace(dt=seg_cfg.dt / 2.0)
            seg_retry = evolve(state, retry_cfg, step_index0=2 * step0)
            if seg_retry.status == STATUS_BLOWUP:
                seg_retry.extra["dt_bisected"] = True
                traj = seg_retry if traj is None else concat_trajectories(traj, seg_retry)
                return traj
            seg = seg_retry
            seg.extra["dt_bisected"] = True
            # remaining segments continue at the bisected dt
            cfg = retry_cfg
            step0 = 2 * step0
        traj = seg if traj is None else concat_trajectories(traj, seg)
        state = seg.final_state()
        nsteps = int(round(this_T / cfg.dt))
        step0 += nsteps
        t_done += this_T
        if seg.status == STATUS_TOLERANCE:
            break
    return traj


# -- Picard ----------------------------------------------------------------------


def picard_local_solve(
    state0: StateVec, interval_length: float, cfg: SolveConfig
) -> Trajectory:
    """Banach fixed-point iteration of the Duhamel map on a fixed mesh.

    u^{m+1}(t_j) = Kdot(t_j) u0 + K(t_j) u1
                   - trapezoid_{0..t_j} K(t_j - t_i) f(u^m(t_i)),
    starting from the free solution, stopping when successive iterates differ
    by < picard_tol in discrete Linf_t H^{s_c}.  The measured contraction
    factors are recorded; three consecutive expansions raise
    ContractionFailure (the analogue of exceeding the smallness condition of
    the local theory).
    """
    grid = state0.grid
    cfg.validate(grid)
    dt = cfg.dt
    M = max(1, int(round(interval_length / dt)))
    omega = grid.omega
    Ks, Cs, wSs = [], [], []
    for m in range(M + 1):
        tw = (m * dt) * omega
        Cs.append(np.cos(tw))
        Ks.append((m * dt) * np.sinc(tw / np.pi))
        wSs.append(omega * np.sin(tw))
    u0_hat = fftn(state0.u.astype(complex))
    v0_hat = fftn(state0.udot.astype(complex))
    u0_hat[grid.nyquist_mask] = 0.0
    v0_hat[grid.nyquist_mask] = 0.0
    free = [Cs[j] * u0_hat + Ks[j] * v0_hat for j in range(M + 1)]
    iterate = [f.copy() for f in free]
    sc = grid.s_c
    factors = []
    distances = []
    expansions = 0
    iterations = 0
    for it in range(cfg.picard_max_iter):
        iterations = it + 1
        f_hats = [_nonlinearity(grid, uh, cfg) for uh in iterate]
        new = []
        for j in range(M + 1):
            acc = free[j].copy()
            if j > 0:
                # trapezoid over [0, t_j]; the i=j term vanishes since K(0)=0
                acc -= (dt / 2.0) * (Ks[j] * f_hats[0])
                for i in range(1, j):
                    acc -= dt * (Ks[j - i] * f_hats[i])
            new.append(acc)
        dist = max(
            sobolev_norm(SpectralField(grid, new[j] - iterate[j]), sc)
            for j in range(M + 1)
        )
        distances.append(dist)
        if len(distances) > 1 and distances[-2] > 0:
            factors.append(dist / distances[-2])
            if dist > distances[-2]:
                expansions += 1
                if expansions >= 3:
                    raise ContractionFailure(
                        "Picard iteration expanded three times in a row "
                        "(interval too long or data too large)",
                        factors,
                    )
            else:
                expansions = 0
        iterate = new
        if dist < cfg.picard_tol:
            break
    # recover udot on the mesh from the converged u samples
    f_hats = [_nonlinearity(grid, uh, cfg) for uh in iterate]
    times, states = [], []
    for j in range(M + 1):
        v_hat = -wSs[j] * u0_hat + Cs[j] * v0_hat
        if j > 0:
            v_hat -= (dt / 2.0) * (Cs[j] * f_hats[0] + f_hats[j])
            for i in range(1, j):
                v_hat -= dt * (Cs[j - i] * f_hats[i])
        times.append(j * dt)
        states.append(
            StateVec(grid, ifftn(iterate[j]).real, ifftn(v_hat).real)
        )
    traj = Trajectory(
        grid=grid,
        times=np.array(times),
        states=states,
        status=STATUS_COMPLETE,
        duhamel_residual=np.zeros(M),
        step_times=np.array(times),
        step_energy=np.array(
            [diagnostics.energy(s, cfg.nonlinearity_sign).total for s in states]
        ),
        cfg=cfg,
        extra={"contraction_factors": factors, "iterations": iterations},
    )
    traj.duhamel_residual = duhamel_residuals(traj, cfg)
    if traj.duhamel_residual.size and traj.duhamel_residual.max() > cfg.duhamel_tol:
        traj.status = STATUS_TOLERANCE
    return traj


# -- two-solution stability ---------------------------------------------------------


@dataclass
class StabilityReport:
    epsilon: float
    diff_st_norm: float
    ratio: float
    window: tuple


class _DiffTraj:
    def __init__(self, grid, times, states):
        self.grid = grid
        self.times = times
        self.states = states


def stability_compare(u_traj: Trajectory, w_traj: Trajectory, window) -> StabilityReport:
    """Empirical two-solution stability ratio on a common sample window.

    epsilon is the [W]-norm over the window of the *free* evolution of the
    initial difference; the report pairs it with ||u - w|| in the scattering
    norm over the window.
    """
    if not u_traj.grid.compatible(w_traj.grid):
        raise GridMismatchError("stability comparison requires a common grid")
    t0, t1 = window
    times_u = np.asarray(u_traj.times, dtype=float)
    times_w = np.asarray(w_traj.times, dtype=float)
    eps = 1e-9 * max(1.0, t1 - t0)
    for times in (times_u, times_w):
        if t0 < times[0] - eps or t1 > times[-1] + eps:
            raise CoverageError(
                f"window [{t0}, {t1}] not covered by samples "
                f"[{times[0]}, {times[-1]}]"
            )
    sel_u = (times_u >= t0 - eps) & (times_u <= t1 + eps)
    sel_w = (times_w >= t0 - eps) & (times_w <= t1 + eps)
    tu = times_u[sel_u]
    tw = times_w[sel_w]
    if len(tu) == 0 or len(tu) != len(tw) or not np.allclose(tu, tw, atol=1e-9):
        raise CoverageError("windows do not share an aligned sample comb")
    grid = u_traj.grid
    bank = LPBank(grid)
    w_spec = NormSpec.w_norm(grid.dim)
    su = [s for s, k in zip(u_traj.states, sel_u) if k]
    sw = [s for s, k in zip(w_traj.states, sel_w) if k]
    diff = _DiffTraj(grid, tu, [a - b for a, b in zip(su, sw)])
    diff_norm = strichartz_norm(bank, diff, w_spec)
    d0 = su[0] - sw[0]
    free_states = [free_propagate(d0, float(t - tu[0])) for t in tu]
    free_traj = _DiffTraj(grid, tu, free_states)
    epsilon = strichartz_norm(bank, free_traj, w_spec)
    ratio = diff_norm / epsilon if epsilon > 0 else 0.0
    return StabilityReport(epsilon, diff_norm, ratio, (float(t0), float(t1)))


# -- checkpointing -------------------------------------------------------------------


def save_checkpoint(prefix, traj_or_state, cfg: SolveConfig, step_index: int,
                    cumulative: dict | None = None):
    """Binary snapshot (u, udot) plus a JSON sidecar; prefix gets .kgf/.json."""
    state = traj_or_state.final_state() if isinstance(traj_or_state, Trajectory) else traj_or_state
    save_snapshot(str(prefix) + ".kgf", state.grid, [state.u, state.udot])
    sidecar = {
        "schema": 1,
        "time": step_index * cfg.dt,
        "step_index": step_index,
        "cfg": asdict(cfg),
        "cumulative": cumulative or {},
    }
    with open(str(prefix) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(prefix):
    grid, fields = load_snapshot(str(prefix) + ".kgf")
    with open(str(prefix) + ".json") as fh:
        sidecar = json.load(fh)
    state = StateVec(grid, fields[0], fields[1])
    cfg = SolveConfig(**sidecar["cfg"])
    return state, cfg, int(sidecar["step_index"]), sidecar.get("cumulative", {})
