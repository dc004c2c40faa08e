"""Estimate quantities, inequality checks and realized constants along a flow."""

import math
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import UnsupportedError
from .geometry import (METRIC_FLOOR, HermitianField, complex_hessian, curvature_norm,
                       eigen_range, laplacian, ricci_form)


@dataclass
class MonitorRecord:
    t: float
    step: int
    sup_v: float
    sup_w: float
    trace_min: float
    trace_max: float
    equiv_cmin: float
    equiv_cmax: float
    Q_max: Optional[float]
    S_max: float
    gradw_max: float
    lp_energy: float
    dissipation: float
    ricci_residual: Optional[float]
    heat_residual: Optional[float]
    dt_used: float
    status: str
    sup_F: float = 0.0
    am_gm_margin: float = 0.0
    equation_residual: float = 0.0
    stationarity_residual: float = 0.0
    volume_defect: Optional[float] = None
    curvature_max: Optional[float] = None

    def as_dict(self):
        return asdict(self)


# realized constants: quantity -> reduction over records
_REALIZED = {
    "sup_v": max, "sup_w": max, "trace_min": min, "trace_max": max,
    "equiv_cmin": min, "equiv_cmax": max, "Q_max": max, "S_max": max,
    "gradw_max": max, "lp_energy": max, "dissipation": max,
    "ricci_residual": max, "heat_residual": max, "sup_F": max,
    "curvature_max": max,
}


@dataclass
class MonitorReport:
    records: list = field(default_factory=list)
    status: str = "running"
    realized: dict = field(default_factory=dict)

    def add(self, record):
        if self.records and not record.t > self.records[-1].t:
            raise ValueError("monitor records must be strictly time-ordered")
        self.records.append(record)

    def finish(self, status):
        self.status = status
        if self.records:
            self.records[-1].status = status
        self.realized = {}
        for name, reduce in _REALIZED.items():
            vals = [getattr(r, name) for r in self.records if getattr(r, name) is not None]
            self.realized[name] = float(reduce(vals)) if vals else None

    def series(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=float)


def _interior(model, frac=0.0):
    if model.is_torus:
        return Ellipsis
    cut = max(1, int(round(frac * model.resolution)))
    return slice(cut, model.resolution - cut)


# ---------------------------------------------------------------------------
# pointwise quantities
# ---------------------------------------------------------------------------

def trace_sigma(v, sigma):
    """``n + Delta_sigma v``."""
    return sigma.model.n + laplacian(v, sigma)


def equivalence_constants(g, model=None):
    """Generalized eigenvalue range of ``g`` against ``g0``."""
    model = g.model if model is None else model
    return eigen_range(g, model.g0)


def _torus_is_flat(sigma, tol=1e-12):
    d = sigma.data
    return float(np.max(np.abs(d - d.reshape(-1, *d.shape[-2:]).mean(axis=0)))) <= tol


def third_order_Q(v, g, sigma):
    """``g^{ij} g^{kl} g^{mn} v_{;ilm} v_{;jkn}`` with covariant derivatives of ``sigma``."""
    model = g.model
    g.check_positive(METRIC_FLOOR)
    if model.is_torus:
        hv = complex_hessian(v, model)
        if model.n == 1:
            s = sigma.data[..., 0, 0]
            t1 = model.dz(hv.data[..., 0, 0])[0] - model.dz(s)[0] / s * hv.data[..., 0, 0]
            return np.abs(t1) ** 2 / g.data[..., 0, 0] ** 3
        if not _torus_is_flat(sigma):
            raise UnsupportedError("third_order_Q on the n = 2 torus needs a flat background")
        n = model.n
        T = np.empty(model.shape + (n, n, n), dtype=complex)
        for i, l in product(range(n), repeat=2):
            # d_m of a complex entry: differentiate real and imaginary parts
            re = model.dz(hv.data[..., i, l].real)
            im = model.dz(hv.data[..., i, l].imag)
            for m in range(n):
                T[..., i, l, m] = re[m] + 1j * im[m]
        G = g.inv().data
        q = np.einsum("...ij,...kl,...mn,...ilm,...jkn->...", G, G, G, T, np.conj(T),
                      optimize=True)
        return np.real(q)

    n = model.n
    e = np.exp(model.s)
    v1, v2 = model.d1(v), model.d2(v)
    v3 = model.d1(v2)
    sp_, sr = sigma.data[:, 0], sigma.data[:, 1]
    # sigma coefficients divided by e^s; exactly zero for the flat background
    b2s = sr - sp_
    b3s = sr * model.d1(np.log(sr)) - 2 * sr + 2 * sp_
    a2v, a3v = v2 - v1, v3 - 3 * v2 + 2 * v1
    X = (2 * a2v + a3v) - (2 * b2s + b3s) * (v2 / sr)
    Y = a2v - b2s * v1 / sp_
    pg1, pg2 = e * g.data[:, 0], e * g.data[:, 1]
    return X ** 2 / pg2 ** 3 + 2 * (n - 1) * Y ** 2 / (pg1 ** 2 * pg2)


def grad_sq(u, g):
    """``g^{ij} u_i u_jbar``."""
    model = g.model
    if model.is_torus:
        dz = model.dz(u)
        if model.n == 1:
            return np.abs(dz[0]) ** 2 / g.data[..., 0, 0]
        G = g.inv().data
        return np.real(sum(G[..., i, j] * dz[i] * np.conj(dz[j])
                           for i in range(model.n) for j in range(model.n)))
    return model.d1(u) ** 2 / (np.exp(model.s) * g.data[:, 1])


def grad_w_sq(w, g):
    return grad_sq(w, g)


def S_quantity(w, g):
    """Squared ``g``-norm of the complex Hessian of ``w``."""
    return g.norm_sq(complex_hessian(w, g.model))


def lp_diagnostics(w, g, p=4, k=1):
    """``(int w^p dV_g, int |grad w^k|^2_g dV_g)``."""
    if p != 2 * k + 2 or k < 1:
        raise ValueError("need p = 2k + 2 with integer k >= 1")
    model = g.model
    vol = g.det() * model.cell_volume()
    sl = _interior(model)
    energy = float(np.sum((w ** p * vol)[sl]))
    diss = float(np.sum((grad_sq(w ** k, g) * vol)[sl]))
    return energy, diss


def ricci_residual(g, omega, model=None, layer=0.1):
    """Sup of the ``g0``-norm of ``Ric(g) - Omega`` (radial: away from the ends)."""
    model = g.model if model is None else model
    form = omega.omega if hasattr(omega, "omega") else omega
    diff = ricci_form(g) - form
    val = np.sqrt(model.g0.norm_sq(diff))
    return float(np.max(val[_interior(model, layer)]))


def sup_F(g, path, forcing, t):
    """``sup |g^{ij} (sigma_t)_{ij} - f_t|``."""
    F = g.inv_trace(path.sigma_t()) - forcing.f_t(t)
    return float(np.max(np.abs(F)))


def heat_residual(window, path, forcing):
    """``sup |Delta_g w - w_t - F|`` at the middle of three consecutive states."""
    if len(window) < 3:
        raise ValueError("heat residual needs three consecutive states")
    s0, s1, s2 = window[-3], window[-2], window[-1]
    d1, d2 = s1.t - s0.t, s2.t - s1.t
    wt = (-d2 / (d1 * (d1 + d2)) * s0.w + (d2 - d1) / (d1 * d2) * s1.w
          + d1 / (d2 * (d1 + d2)) * s2.w)
    g = s1.g
    F = g.inv_trace(path.sigma_t()) - forcing.f_t(s1.t)
    res = g.inv_trace(complex_hessian(s1.w, g.model)) - wt - F
    return float(np.max(np.abs(res[_interior(g.model)])))


# ---------------------------------------------------------------------------
# Hoelder seminorms
# ---------------------------------------------------------------------------

def _offsets(spacing, radius, half):
    ranges = [range(-int(radius / h + 1e-9), int(radius / h + 1e-9) + 1) for h in spacing]
    out = []
    for k in product(*ranges):
        if not any(k):
            continue
        if half and next(x for x in k if x) < 0:
            continue
        d = math.sqrt(sum((ki * h) ** 2 for ki, h in zip(k, spacing)))
        if d <= radius + 1e-12:
            out.append((k, d))
    return out


def _shift_pair(a, b, k, periodic):
    """Arrays ``(a[x + k], b[x])`` over the nodes where both are defined."""
    if periodic:
        return np.roll(a, [-ki for ki in k], axis=tuple(range(len(k)))), b
    sa, sb = [], []
    for ki, n in zip(k, a.shape):
        sa.append(slice(ki, n) if ki >= 0 else slice(0, n + ki))
        sb.append(slice(0, n - ki) if ki >= 0 else slice(-ki, n))
    return a[tuple(sa)], b[tuple(sb)]


def holder_seminorm(window, alpha, mode="elliptic", spacing=None, times=None,
                    periodic=False, radius=1.0):
    """Discrete Hoelder seminorm over node pairs at distance at most ``radius``.

    ``window`` is one field or a sequence of fields at ``times``.  Elliptic
    mode uses same-time pairs only; parabolic mode adds pairs at different
    times with denominator ``|x - x'|^alpha + |t - t'|^{alpha/2}``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if isinstance(window, np.ndarray):
        window = [window]
    window = [np.asarray(u, dtype=float) for u in window]
    if not window:
        raise ValueError("empty window")
    if spacing is None:
        raise ValueError("spacing is required")
    spacing = tuple(spacing) if np.ndim(spacing) else (float(spacing),) * window[0].ndim
    best = 0.0
    for k, d in _offsets(spacing, radius, half=True):
        den = d ** alpha
        for u in window:
            a, b = _shift_pair(u, u, k, periodic)
            if a.size:
                best = max(best, float(np.max(np.abs(a - b))) / den)
    if mode == "elliptic" or len(window) < 2:
        return best
    if mode != "parabolic":
        raise ValueError(f"unknown mode {mode!r}")
    if times is None or len(times) != len(window):
        raise ValueError("parabolic mode needs one time per field")
    all_k = [((0,) * window[0].ndim, 0.0)] + _offsets(spacing, radius, half=False)
    for i in range(len(window)):
        for j in range(i + 1, len(window)):
            dt = abs(times[j] - times[i])
            if dt == 0 or dt > radius:
                continue
            for k, d in all_k:
                a, b = _shift_pair(window[j], window[i], k, periodic)
                if a.size:
                    best = max(best, float(np.max(np.abs(a - b))) / (d ** alpha + dt ** (alpha / 2)))
    return best


def holder_2a_series(problem, snapshots, alpha=0.5, radius=1.0):
    """Parabolic seminorms of ``ddbar v`` and ``v_t`` over consecutive snapshot pairs.

    Returns a list of ``(t, value)``, one entry per pair, ``t`` the later time.
    """
    from .flow import ma_rhs

    model = problem.model
    fields_at = []
    for t, v in snapshots:
        hv = complex_hessian(v, model).data
        comps = [hv[..., i] for i in range(hv.shape[-1])] if not model.is_torus else \
            [c for i in range(model.n) for j in range(i, model.n)
             for c in ((hv[..., i, j].real,) if i == j else (hv[..., i, j].real, hv[..., i, j].imag))]
        comps.append(ma_rhs(v, problem.path, problem.forcing, t=t))
        fields_at.append(comps)
    out = []
    for (t0, _), (t1, _), c0, c1 in zip(snapshots[:-1], snapshots[1:], fields_at[:-1], fields_at[1:]):
        val = max(holder_seminorm([a, b], alpha, "parabolic", model.spacing, [t0, t1],
                                  model.periodic, radius) for a, b in zip(c0, c1))
        out.append((t1, val))
    return out


# ---------------------------------------------------------------------------
# inequality checks
# ---------------------------------------------------------------------------

def am_gm_margin(v, sigma, g):
    """``n + Delta_sigma v - n (det g / det sigma)^{1/n}`` node-wise."""
    n = g.model.n
    return trace_sigma(v, sigma) - n * (g.det() / sigma.det()) ** (1.0 / n)


def make_record(problem, state, window, settings, status="running"):
    model = problem.model
    path, forcing = problem.path, problem.forcing
    g, v, w, t = state.g, state.v, state.w, state.t
    sigma = path.sigma(t)
    inner = _interior(model)
    inner10 = _interior(model, 0.1)

    tr = trace_sigma(v, sigma)
    cmin, cmax = equivalence_constants(g)
    try:
        q = third_order_Q(v, g, sigma)
        q_max = float(np.max(q[inner]))
    except UnsupportedError:
        q_max = None
    energy, diss = lp_diagnostics(w, g, settings.p, settings.k)
    omega = problem.omega
    ric = ricci_residual(g, omega) if omega is not None else None
    heat = heat_residual(window, path, forcing) if len(window) >= 3 else None

    ratio = np.exp(g.logdet() - model.g0.logdet())
    f = forcing.f(t)
    eq_res = float(np.max(np.abs(ratio - np.exp(f - w))[inner]))
    stat_res = float(np.max(np.abs(np.log(ratio) - f)[inner]))

    vol = None
    if model.is_torus:
        v0 = float(np.sum(model.g0.det()))
        vol = abs(float(np.sum(g.det())) - v0) / v0
    curv = None
    if not model.is_torus or model.n == 1:
        curv = float(np.max(curvature_norm(g)[inner10]))

    return MonitorRecord(
        t=float(t), step=int(state.steps),
        sup_v=float(np.max(np.abs(v))), sup_w=float(np.max(np.abs(w[inner]))),
        trace_min=float(np.min(tr[inner])), trace_max=float(np.max(tr[inner])),
        equiv_cmin=cmin, equiv_cmax=cmax, Q_max=q_max,
        S_max=float(np.max(S_quantity(w, g)[inner])),
        gradw_max=float(np.max(grad_w_sq(w, g)[inner])),
        lp_energy=energy, dissipation=diss, ricci_residual=ric, heat_residual=heat,
        dt_used=float(state.dt_last), status=status,
        sup_F=sup_F(g, path, forcing, t),
        am_gm_margin=float(np.min(am_gm_margin(v, sigma, g)[inner])),
        equation_residual=eq_res, stationarity_residual=stat_res,
        volume_defect=vol, curvature_max=curv)


SUITE_TOLERANCES = {
    "am_gm": -1e-12,
    "equation": 1e-10,
    "sup_w_slack_per_step": 1e-8,
    "volume": 1e-12,
}


def inequality_suite(report, static=True, tol=None):
    """Worst margins over a run.

    Returns ``{name: {"margin": value, "pass": bool, "detail": str}}`` for
    the AM-GM lower trace bound, the equation residual, monotonicity of
    ``sup |w|`` (only when ``static``), torus volume conservation and
    finiteness of the equivalence constants.
    """
    tol = {**SUITE_TOLERANCES, **(tol or {})}
    recs = report.records if hasattr(report, "records") else list(report)
    out = {}

    def bad(name, values):
        for r, x in zip(recs, values):
            if x is not None and not np.isfinite(x):
                out[name] = {"margin": float("nan"), "pass": False,
                             "detail": f"non-finite {name} in record at t={r.t}"}
                return True
        return False

    vals = [r.am_gm_margin for r in recs]
    if not bad("am_gm", vals):
        m = min(vals) if vals else 0.0
        out["am_gm"] = {"margin": m, "pass": m >= tol["am_gm"], "detail": ""}

    vals = [r.equation_residual for r in recs]
    if not bad("equation", vals):
        m = max(vals) if vals else 0.0
        out["equation"] = {"margin": m, "pass": m <= tol["equation"], "detail": ""}

    if static:
        vals = [r.sup_w for r in recs]
        if not bad("sup_w", vals):
            worst = 0.0
            for a, b in zip(recs[:-1], recs[1:]):
                slack = tol["sup_w_slack_per_step"] * max(1, b.step - a.step)
                worst = max(worst, b.sup_w - a.sup_w - slack)
            out["sup_w"] = {"margin": worst, "pass": worst <= 0.0, "detail": ""}

    vals = [r.volume_defect for r in recs if r.volume_defect is not None]
    if vals and not bad("volume", vals):
        m = max(vals)
        out["volume"] = {"margin": m, "pass": m <= tol["volume"], "detail": ""}

    lo = [r.equiv_cmin for r in recs]
    hi = [r.equiv_cmax for r in recs]
    if not bad("equiv_cmin", lo) and not bad("equiv_cmax", hi):
        ok = (min(lo) > 0) if lo else True
        out["equivalence"] = {"margin": max(hi) if hi else 1.0, "pass": ok, "detail": ""}
    return out


def laplacian_inequality_check(h, u, floor=METRIC_FLOOR):
    """Min of ``Delta~ phi - |grad~ phi|^2 / phi + tr_h Ric~`` with ``phi = tr_h h~``.

    ``h`` must be flat, ``h~ = h + ddbar u``.  Nonnegative in the continuum.
    """
    model = h.model
    if model.is_torus:
        if not _torus_is_flat(h):
            raise UnsupportedError("Laplacian inequality check needs a flat background")
    elif not np.allclose(h.data, 1.0, rtol=0, atol=1e-14):
        raise UnsupportedError("Laplacian inequality check needs the flat radial background")
    ht = h + complex_hessian(u, model)
    ht.check_positive(floor, what="h + ddbar u")
    phi = h.inv_trace(ht)
    margin = laplacian(phi, ht) - grad_sq(phi, ht) / phi + h.inv_trace(ricci_form(ht))
    return float(np.min(margin[_interior(model, 0.0 if model.is_torus else 0.02)]))


def volume_growth_check(model, radii, bound=None):
    """``max_r V0(r) / r^{2n}`` with ``V0`` the ``g0``-volume of ``|z| < r``.

    Below the grid the background is treated as having the constant density
    of the first node.  Returns ``(C3, passed)``; ``passed`` compares against
    ``bound`` when given, else requires a finite estimate.
    """
    if model.is_torus:
        return 0.0, True
    n = model.n
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    s_r = np.log(radii ** 2)
    if np.any(s_r > model.s_max + 1e-12):
        raise ValueError(f"radius beyond truncation r_max = {math.exp(model.s_max / 2):.6g}")
    s = model.s
    dens = math.pi ** n / math.factorial(n - 1) * np.exp(n * s) * model.g0.det()
    inner = math.pi ** n / math.factorial(n) * math.exp(n * s[0]) * model.g0.det()[0]
    cum = inner + cumulative_trapezoid(dens, s, initial=0.0)
    ball = np.where(s_r < s[0],
                    math.pi ** n / math.factorial(n) * radii ** (2 * n) * model.g0.det()[0],
                    0.0)
    inside = s_r >= s[0]
    if np.any(inside):
        sr = s_r[inside]
        idx = np.clip(np.searchsorted(s, sr, side="right") - 1, 0, len(s) - 2)
        part = sr - s[idx]
        d_at = np.interp(sr, s, dens)
        ball[inside] = cum[idx] + 0.5 * (dens[idx] + d_at) * part
    ratio = ball / radii ** (2 * n)
    c3 = float(np.max(ratio))
    passed = np.isfinite(c3) if bound is None else c3 <= bound
    return c3, bool(passed)
