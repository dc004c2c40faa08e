"""Explicit time stepping of the parabolic complex Monge-Ampere flow

    v_t = log det(sigma(t) + ddbar v) / det g0 - f(t),    w = -v_t.
"""

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .background import BackgroundPath, Forcing, PrescribedForm
from .errors import DegenerateMetricError, NumericBlowupError
from .geometry import METRIC_FLOOR, HermitianField, ModelGeometry, complex_hessian

STATUSES = ("converged", "horizon_reached", "degenerate", "blowup", "wall_budget")


@dataclass
class FlowProblem:
    model: ModelGeometry
    path: BackgroundPath
    forcing: Forcing
    omega: Optional[PrescribedForm] = None
    v0: Optional[np.ndarray] = None

    def initial_potential(self):
        if self.v0 is None:
            return np.zeros(self.model.shape)
        return self.model.check_field(np.asarray(self.v0, dtype=float), "v0").copy()


@dataclass
class RunSettings:
    t_max: float = 1.0
    dt_safety: float = 0.2
    tol_w: float = 1e-7
    record_interval: Optional[float] = None
    record_every_steps: Optional[int] = None
    snapshot_interval: Optional[float] = None
    p: int = 4
    k: int = 1
    dt: Optional[float] = None
    max_steps: Optional[int] = None
    max_wall_seconds: Optional[float] = None
    floor: float = METRIC_FLOOR
    monitor: bool = True


@dataclass
class FlowState:
    t: float
    v: np.ndarray
    g: HermitianField
    w: np.ndarray
    steps: int = 0
    dt_last: float = 0.0


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)   # (t, v) pairs
    final: Optional[FlowState] = None
    status: str = "horizon_reached"
    error: Optional[str] = None

    @property
    def times(self):
        return [t for t, _ in self.snapshots]


def interior(model):
    """Index selecting nodes away from truncation ends (all nodes on the torus)."""
    if model.is_torus:
        return Ellipsis
    return slice(1, -1)


def metric(v, t, path):
    return path.sigma(t) + complex_hessian(v, path.model)


def _rhs(v, t, path, forcing, floor=METRIC_FLOOR):
    g = metric(v, t, path)
    g.check_positive(floor, t=t)
    r = g.logdet() - path.model.g0_logdet - forcing.f(t)
    return r, g


def ma_rhs(state, path, forcing, t=None, floor=METRIC_FLOOR):
    """Right-hand side ``log det g / det g0 - f`` of the flow.

    ``state`` may be a :class:`FlowState` or a bare potential (then pass ``t``).
    """
    if isinstance(state, FlowState):
        v, t = state.v, state.t
    else:
        v, t = state, (0.0 if t is None else t)
    return _rhs(v, t, path, forcing, floor)[0]


def make_state(problem, v=None, t=0.0, floor=METRIC_FLOOR):
    v = problem.initial_potential() if v is None else v
    v = apply_boundary(v, t, problem.path)
    r, g = _rhs(v, t, problem.path, problem.forcing, floor)
    return FlowState(t, v, g, -r)


def apply_boundary(v, t, path):
    """Radial truncation conditions on the physical potential.

    Neumann ``p'(s_min) = 0`` (second-order one-sided) and Dirichlet
    ``p(s_max) = 0``.  No-op on the torus.
    """
    model = path.model
    if model.is_torus:
        return v
    off = np.zeros(3) if path.shift_offset is None else path.shift_offset
    rate = np.zeros(3) if path.shift_rate is None else path.shift_rate
    shift_lo = off[:3] + t * rate[:3]
    p1, p2 = v[1] + shift_lo[1], v[2] + shift_lo[2]
    v[0] = (4.0 * p1 - p2) / 3.0 - shift_lo[0]
    shift_hi = (0.0 if path.shift_offset is None else path.shift_offset[-1]) + \
        t * (0.0 if path.shift_rate is None else path.shift_rate[-1])
    v[-1] = -shift_hi
    return v


def max_inverse_trace(g):
    """``max tr g^{-1}`` in grid coordinates (s-coordinates on the radial model)."""
    model = g.model
    if model.is_torus:
        if model.n == 1:
            return float(np.max(1.0 / g.data[..., 0, 0]))
        return float(np.max(np.real(g.inv().data[..., 0, 0] + g.inv().data[..., 1, 1])))
    n = model.n
    tr = np.exp(-model.s) * ((n - 1) / g.data[:, 0] + 1.0 / g.data[:, 1])
    return float(np.max(tr))


def stable_dt(state, safety=0.2):
    """``safety * h^2 / (2 max tr g^{-1})``."""
    h = min(state.g.model.spacing)
    return safety * h * h / (2.0 * max_inverse_trace(state.g))


def step(state, path, forcing, dt, floor=METRIC_FLOOR):
    """Two-stage explicit midpoint step; positivity checked at every stage."""
    t = state.t
    v_mid = apply_boundary(state.v - 0.5 * dt * state.w, t + 0.5 * dt, path)
    r_mid, _ = _rhs(v_mid, t + 0.5 * dt, path, forcing, floor)
    v_new = apply_boundary(state.v + dt * r_mid, t + dt, path)
    # a single reduction propagates any nan/inf
    if not np.isfinite(v_new.sum()):
        raise NumericBlowupError(f"non-finite potential at t={t + dt:.6g}", t=t + dt)
    r_new, g_new = _rhs(v_new, t + dt, path, forcing, floor)
    return FlowState(t + dt, v_new, g_new, -r_new, state.steps + 1, dt)


def sup_w(state):
    return float(np.max(np.abs(state.w[interior(state.g.model)])))


def run(problem, settings=None, record_hook=None):
    """Integrate until ``t_max``, convergence, a numerical failure or the wall budget.

    Returns ``(Trajectory, MonitorReport)``.  Monitor records are taken every
    ``record_interval`` of simulated time (and at start and end).
    """
    from .monitor import MonitorReport, make_record

    settings = settings or RunSettings()
    traj = Trajectory()
    report = MonitorReport()
    clock = time.perf_counter()

    state = make_state(problem, floor=settings.floor)
    window = deque([state], maxlen=3)
    traj.snapshots.append((state.t, state.v.copy()))

    def record(st):
        if not settings.monitor:
            return
        rec = make_record(problem, st, list(window), settings, status="running")
        report.add(rec)
        if record_hook is not None:
            record_hook(rec)

    record(state)
    rec_every = settings.record_interval
    snap_every = settings.snapshot_interval
    next_rec = rec_every if rec_every else np.inf
    next_snap = snap_every if snap_every else np.inf
    status = "horizon_reached"
    eps_t = 1e-12 * max(1.0, settings.t_max)
    # w -> 0 only signals a limit when nothing else moves with t
    can_converge = problem.path.is_static and problem.forcing.is_static

    try:
        if can_converge and sup_w(state) < settings.tol_w:
            status = "converged"
        while status != "converged" and state.t < settings.t_max - eps_t:
            if settings.max_steps is not None and state.steps >= settings.max_steps:
                break
            if settings.max_wall_seconds is not None and \
                    time.perf_counter() - clock > settings.max_wall_seconds:
                status = "wall_budget"
                break
            dt = settings.dt if settings.dt else stable_dt(state, settings.dt_safety)
            dt = min(dt, settings.t_max - state.t)
            state = step(state, problem.path, problem.forcing, dt, settings.floor)
            window.append(state)
            converged = can_converge and sup_w(state) < settings.tol_w
            if state.t >= next_snap - eps_t:
                traj.snapshots.append((state.t, state.v.copy()))
            while state.t >= next_snap - eps_t:
                next_snap += snap_every
            due = state.t >= next_rec - eps_t
            if settings.record_every_steps:
                due = due or state.steps % settings.record_every_steps == 0
            if due and not converged:
                record(state)
            while state.t >= next_rec - eps_t:
                next_rec += rec_every
            if converged:
                status = "converged"
    except DegenerateMetricError as exc:
        status, traj.error = "degenerate", str(exc)
    except NumericBlowupError as exc:
        status, traj.error = "blowup", str(exc)

    if not report.records or report.records[-1].t != state.t:
        record(state)
    if traj.snapshots[-1][0] != state.t:
        traj.snapshots.append((state.t, state.v.copy()))
    traj.final = state
    traj.status = status
    report.finish(status)
    return traj, report


def psh_gauge_transform(path, forcing, F, T=None):
    """Hat transform by a barrier ``F``.

    ``sigma^(t) = sigma(t) + (t/T) ddbar F``, ``f^ = f + F/T`` and
    ``v^ = v - (t/T) F``.  The metric ``sigma^ + ddbar v^`` equals
    ``sigma + ddbar v`` at every time.
    """
    model = path.model
    T = path.T if T is None else T
    if T is None or not T > 0:
        raise ValueError("hat transform needs a horizon T > 0")
    F = model.check_field(np.asarray(F, dtype=float), "F")
    hF = complex_hessian(F, model)
    slope = hF / T if path.slope is None else path.slope + hF / T
    # the original potential is v^ + (t/T) F
    rate = F / T if path.shift_rate is None else path.shift_rate + F / T
    new = BackgroundPath(path.kind, model, path.sigma0, slope, T,
                         shift_offset=path.shift_offset, shift_rate=rate)
    new.sigma(T).check_positive(METRIC_FLOOR, t=T, what="sigma(T) + ddbar F")
    f_new = Forcing(forcing.f0 + F / T, forcing.C1, forcing.eps)
    if not forcing.is_static:
        f_of_t, ft_of_t = forcing.f_of_t, forcing.ft_of_t
        f_new.f_of_t = lambda t: f_of_t(t) + F / T
        f_new.ft_of_t = ft_of_t
    return new, f_new


def inverse_psh_gauge_transform(path, forcing, F, T=None):
    """Undo :func:`psh_gauge_transform` with the same barrier."""
    return psh_gauge_transform(path, forcing, -np.asarray(F, dtype=float), T)
