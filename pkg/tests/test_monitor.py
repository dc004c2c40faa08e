import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from kahlerflow.background import Forcing, make_schedule, prescribed_form, zero_forcing
from kahlerflow.errors import UnsupportedError
from kahlerflow.flow import FlowProblem, RunSettings, make_state, run
from kahlerflow.geometry import HermitianField, ModelGeometry, complex_hessian, ricci_form
from kahlerflow.monitor import (MonitorReport, S_quantity, am_gm_margin, equivalence_constants,
                                grad_w_sq, heat_residual, holder_seminorm, inequality_suite,
                                laplacian_inequality_check, lp_diagnostics, make_record,
                                ricci_residual, third_order_Q, trace_sigma,
                                volume_growth_check)

from oracles import radial_Q


def X(m):
    return np.broadcast_to(m.x(0), m.shape).copy()


def Y(m):
    return np.broadcast_to(m.y(0), m.shape).copy()


def conformal(m, lam):
    g = HermitianField.zeros(m)
    g.data[..., 0, 0] = lam
    return g


def at(m, field, x0, y0=0.0):
    i = int(round(x0 / m.h)) % m.resolution
    j = int(round(y0 / m.h)) % m.resolution
    return field[i, j]


# ---------------------------------------------------------------------------
# pointwise quantities
# ---------------------------------------------------------------------------

def test_trace_sigma_examples():
    m = ModelGeometry.torus(2, 8)
    np.testing.assert_array_equal(trace_sigma(np.zeros(m.shape), m.g0), 2.0)
    m = ModelGeometry.torus(1, 256)
    tr = trace_sigma(0.4 * np.cos(X(m)), m.g0)
    assert tr[0, 0] == pytest.approx(0.9, abs=1e-5)


def _random_positive(rng, m, scale=0.3):
    # positive definite by construction: identity plus a small Hermitian part
    a = rng.normal(size=m.shape + (m.n, m.n)) + 1j * rng.normal(size=m.shape + (m.n, m.n))
    herm = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    return np.eye(m.n) + scale / m.n * herm


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_am_gm_on_random_positive_fields(seed):
    rng = np.random.default_rng(seed)
    m = ModelGeometry.torus(2, 8)
    sigma = HermitianField(_random_positive(rng, m), m)
    v = 0.02 * rng.normal(size=m.shape)
    g = sigma + complex_hessian(v, m)
    if np.min(g.min_eig()) <= 0:
        return
    assert np.min(am_gm_margin(v, sigma, g)) >= -1e-12


def test_equivalence_examples():
    m = ModelGeometry.torus(1, 256)
    assert equivalence_constants(m.g0) == pytest.approx((1.0, 1.0))
    assert equivalence_constants(m.g0 * 2.0) == pytest.approx((2.0, 2.0))
    lo, hi = equivalence_constants(conformal(m, 1 - 0.1 * np.cos(X(m))))
    assert lo == pytest.approx(0.9, abs=1e-12) and hi == pytest.approx(1.1, abs=1e-12)


def test_third_order_Q_examples():
    m = ModelGeometry.torus(1, 512)
    assert np.max(third_order_Q(np.zeros(m.shape), m.g0, m.g0)) == 0.0
    v = 0.4 * np.cos(X(m))
    g = m.g0 + complex_hessian(v, m)
    q = third_order_Q(v, g, m.g0)
    assert at(m, q, math.pi / 2) == pytest.approx(0.0025, rel=1e-4)
    # constant Hessian on the radial model: v = a * e^s
    r = ModelGeometry.radial(2, 256, -4, 4)
    v = 0.3 * np.exp(r.s)
    g = r.g0 + complex_hessian(v, r)
    # zero up to the squared truncation error of the s-derivatives
    assert np.max(np.abs(third_order_Q(v, g, r.g0)[2:-2])) <= 1e-6


def test_third_order_Q_rejects_curved_n2_torus():
    m0 = ModelGeometry.torus(2, 8)
    m = ModelGeometry.torus(2, 8, psi=0.3 * np.broadcast_to(m0.x(0), m0.shape).copy())
    with pytest.raises(UnsupportedError):
        third_order_Q(np.zeros(m.shape), m.g0, m.g0)


@pytest.mark.parametrize("curved", [False, True])
def test_third_order_Q_radial_against_symbolic(curved):
    n = 2
    m = ModelGeometry.radial(n, 4001, -3, 3)
    t = np.exp(m.s)
    if curved:
        S = lambda u: u + sp.log(1 + u) / 2
        sp_, sr = 1 + 0.5 / (1 + t), 1 + 0.5 / (1 + t) ** 2
    else:
        S = lambda u: u
        sp_, sr = np.ones_like(t), np.ones_like(t)
    V = lambda u: sp.Rational(3, 10) * sp.exp(-u)
    sigma = HermitianField(np.stack([sp_, sr], -1), m)
    v = 0.3 * np.exp(-t)
    g = sigma + complex_hessian(v, m)
    q = third_order_Q(v, g, sigma)
    for s0 in (-1.0, 0.0, 1.0):
        i = int(np.argmin(np.abs(m.s - s0)))
        ref = radial_Q(S, V, n, math.exp(m.s[i] / 2))
        assert q[i] == pytest.approx(ref, rel=1e-4)


def test_grad_w_sq_examples():
    m = ModelGeometry.torus(1, 512)
    assert np.max(grad_w_sq(np.full(m.shape, 3.0), m.g0)) == 0.0
    w = np.sin(X(m))
    gw = grad_w_sq(w, m.g0)
    assert gw[0, 0] == pytest.approx(0.25, rel=1e-4)
    np.testing.assert_allclose(grad_w_sq(2 * w, m.g0), 4 * gw, rtol=1e-14)


def test_S_quantity_examples():
    m = ModelGeometry.torus(1, 512)
    assert np.max(S_quantity(np.full(m.shape, 3.0), m.g0)) == 0.0
    w = np.sin(X(m))
    s = S_quantity(w, m.g0)
    assert at(m, s, math.pi / 2) == pytest.approx(0.0625, rel=1e-4)
    np.testing.assert_allclose(S_quantity(w, m.g0 * 2.0), s / 4, rtol=1e-14)


def test_lp_diagnostics_examples():
    m = ModelGeometry.torus(1, 32)
    assert lp_diagnostics(np.zeros(m.shape), m.g0) == (0.0, 0.0)
    c = 0.3
    e, d = lp_diagnostics(np.full(m.shape, c), m.g0, 4, 1)
    assert e == pytest.approx(c ** 4 * (2 * math.pi) ** 2, rel=1e-12)
    assert d == 0.0
    with pytest.raises(ValueError):
        lp_diagnostics(np.zeros(m.shape), m.g0, 5, 1)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5))
def test_quantities_ignore_added_constants(c):
    m = ModelGeometry.torus(1, 32)
    v = 0.3 * np.cos(X(m)) * np.sin(Y(m))
    g = m.g0 + complex_hessian(v, m)
    np.testing.assert_allclose(trace_sigma(v + c, m.g0), trace_sigma(v, m.g0), atol=1e-12)
    np.testing.assert_allclose(third_order_Q(v + c, g, m.g0), third_order_Q(v, g, m.g0),
                               atol=1e-12)
    np.testing.assert_allclose(S_quantity(v + c, g), S_quantity(v, g), atol=1e-12)
    np.testing.assert_allclose(grad_w_sq(v + c, g), grad_w_sq(v, g), atol=1e-12)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def test_ricci_residual_examples():
    m = ModelGeometry.torus(1, 64)
    zero = HermitianField.zeros(m)
    assert ricci_residual(m.g0, zero) == 0.0
    g1 = conformal(m, 1 - 0.1 * np.cos(X(m)))
    assert ricci_residual(g1, ricci_form(g1)) <= 1e-14
    assert ricci_residual(g1, zero) > 1e-3


def test_heat_residual_examples():
    m = ModelGeometry.torus(1, 16)
    p = FlowProblem(m, make_schedule("constant", m), zero_forcing(m))
    states = [make_state(p, t=t) for t in (0.0, 0.1, 0.2)]
    states[1].t, states[2].t = 0.1, 0.2
    assert heat_residual(states, p.path, p.forcing) == 0.0
    with pytest.raises(ValueError):
        heat_residual(states[:2], p.path, p.forcing)


def _heat_run(N, dt, kind):
    m = ModelGeometry.torus(1, N, psi=0.4 * np.cos(X(ModelGeometry.torus(1, N))))
    path = make_schedule(kind, m, {"T": 1.0} if kind != "constant" else None)
    p = FlowProblem(m, path, Forcing(0.1 * np.sin(X(m))), v0=0.2 * np.cos(Y(m)))
    traj, rep = run(p, RunSettings(t_max=0.05, dt=dt, record_interval=0.025))
    return rep.series("heat_residual")[-1]


@pytest.mark.parametrize("kind", ["constant", "krf_linear"])
def test_heat_residual_decreases_under_refinement(kind):
    coarse = _heat_run(16, 1e-3, kind)
    fine = _heat_run(32, 2.5e-4, kind)
    assert fine < coarse
    assert fine <= 1e-4


# ---------------------------------------------------------------------------
# Hoelder seminorms
# ---------------------------------------------------------------------------

def test_holder_examples():
    x = np.linspace(0.0, 1.0, 41)
    assert holder_seminorm(np.zeros(41), 0.5, spacing=1 / 40) == 0.0
    assert holder_seminorm(x, 0.5, spacing=1 / 40) == pytest.approx(1.0, rel=1e-12)
    assert holder_seminorm(x + 7.0, 0.5, spacing=1 / 40) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        holder_seminorm([], 0.5, spacing=0.1)
    with pytest.raises(ValueError):
        holder_seminorm(x, 1.0, spacing=0.1)


def test_holder_parabolic_adds_time_pairs():
    x = np.linspace(0.0, 1.0, 11)
    a, b = np.zeros(11), np.full(11, 0.5)
    val = holder_seminorm([a, b], 0.5, "parabolic", 0.1, [0.0, 0.25])
    # the same-node pair gives 0.5 / 0.25^{0.25}
    assert val == pytest.approx(0.5 / 0.25 ** 0.25, rel=1e-12)
    assert holder_seminorm([a, b], 0.5, "elliptic", 0.1) == 0.0
    del x


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 0.9))
def test_holder_subadditive(seed, alpha):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, 12, 12))
    kw = dict(spacing=(0.25, 0.25), periodic=True)
    lhs = holder_seminorm(u + v, alpha, **kw)
    assert lhs <= holder_seminorm(u, alpha, **kw) + holder_seminorm(v, alpha, **kw) + 1e-12


# ---------------------------------------------------------------------------
# suite and reports
# ---------------------------------------------------------------------------

def _flat_report():
    m = ModelGeometry.torus(1, 16)
    p = FlowProblem(m, make_schedule("constant", m), zero_forcing(m))
    s = make_state(p)
    rep = MonitorReport()
    for t in (0.0, 0.5, 1.0):
        s.t = t
        rep.add(make_record(p, s, [s], RunSettings()))
    rep.finish("converged")
    return rep


def test_flat_state_all_quantities_zero():
    rec = _flat_report().records[0]
    for name in ("sup_v", "sup_w", "Q_max", "S_max", "gradw_max", "lp_energy", "dissipation",
                 "sup_F", "am_gm_margin", "equation_residual", "stationarity_residual",
                 "volume_defect", "curvature_max"):
        assert getattr(rec, name) == 0.0, name


def test_suite_flat_run_passes():
    suite = inequality_suite(_flat_report())
    assert all(item["pass"] for item in suite.values())
    assert suite["am_gm"]["margin"] == 0.0 and suite["equation"]["margin"] == 0.0


def test_suite_flags_nan():
    rep = _flat_report()
    rep.records[1].equation_residual = float("nan")
    suite = inequality_suite(rep)
    assert not suite["equation"]["pass"]
    assert "equation" in suite["equation"]["detail"]


def test_report_realized_constants_and_order():
    rep = _flat_report()
    assert rep.realized["sup_w"] == max(r.sup_w for r in rep.records)
    with pytest.raises(ValueError):
        rep.add(rep.records[0])


def test_equation_residual_matches_sup_w_at_convergence():
    m = ModelGeometry.torus(1, 32)
    f0 = 0.05 * np.cos(X(m))
    # normalize so that a stationary limit exists: mean of exp(f0) equal to 1
    f0 -= math.log(np.mean(np.exp(f0)))
    p = FlowProblem(m, make_schedule("constant", m), Forcing(f0), v0=0.1 * np.sin(Y(m)))
    traj, rep = run(p, RunSettings(t_max=200.0, dt_safety=0.5, tol_w=1e-9))
    assert rep.status == "converged"
    rec = rep.records[-1]
    assert abs(rec.stationarity_residual - rec.sup_w) <= 1e-12


# ---------------------------------------------------------------------------
# Laplacian inequality and volume growth
# ---------------------------------------------------------------------------

def test_laplacian_inequality_examples():
    m = ModelGeometry.torus(1, 128)
    assert laplacian_inequality_check(m.g0, np.zeros(m.shape)) == 0.0
    # constants are the only periodic pluriharmonic functions
    assert laplacian_inequality_check(m.g0, np.full(m.shape, 2.0)) == 0.0
    assert laplacian_inequality_check(m.g0, 0.4 * np.cos(X(m))) >= -5e-3


def test_laplacian_inequality_harmonic_radial():
    m = ModelGeometry.radial(2, 256, -4, 4)
    assert laplacian_inequality_check(m.g0, np.zeros(m.shape)) == 0.0


def test_volume_growth_examples():
    m = ModelGeometry.radial(2, 2048, -8, 4)
    c3, ok = volume_growth_check(m, [0.5, 1.0, 2.0, 5.0])
    assert ok and c3 == pytest.approx(math.pi ** 2 / 2, rel=1e-2)
    small, _ = volume_growth_check(m, [1e-3])
    assert small == pytest.approx(math.pi ** 2 / 2, rel=2e-2)
    assert volume_growth_check(ModelGeometry.torus(1, 8), [1.0]) == (0.0, True)
    with pytest.raises(ValueError):
        volume_growth_check(m, [100.0])


def test_prescribed_target_residual_small():
    m = ModelGeometry.torus(1, 64)
    m1 = ModelGeometry.torus(1, 64, psi=0.4 * np.cos(X(m)))
    pf = prescribed_form(m, np.zeros(m.shape))
    assert ricci_residual(m1.g0, ricci_form(m1.g0)) == 0.0
    assert ricci_residual(m.g0, pf) == 0.0
