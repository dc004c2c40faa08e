"""Background paths sigma(t), forcing terms and prescribed Ricci forms."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityError, DegenerateMetricError, ShapeError
from .geometry import (METRIC_FLOOR, HermitianField, ModelGeometry, complex_hessian,
                       distance_like, eigen_range, ricci_form)

SCHEDULE_KINDS = ("constant", "krf_linear", "interpolation")


@dataclass
class BackgroundPath:
    """Affine-in-time background form ``sigma(t) = sigma0 + t * slope``.

    ``shift_offset`` and ``shift_rate`` record a potential gauge: a solution
    ``v`` of the problem posed on this path corresponds to the potential
    ``v + shift_offset + t * shift_rate`` of the original, untransformed
    problem.  Boundary conditions on truncated models act on that potential.
    """

    kind: str
    model: ModelGeometry
    sigma0: HermitianField
    slope: Optional[HermitianField] = None
    T: Optional[float] = None
    shift_offset: Optional[np.ndarray] = None
    shift_rate: Optional[np.ndarray] = None

    def sigma(self, t):
        if self.slope is None or t == 0:
            return self.sigma0
        return HermitianField(self.sigma0.data + t * self.slope.data, self.model)

    def sigma_t(self):
        if self.slope is None:
            return HermitianField.zeros(self.model)
        return self.slope

    @property
    def is_static(self):
        return self.slope is None or not np.any(self.slope.data)

    def physical_potential(self, v, t):
        """Potential of the untransformed problem corresponding to ``v``."""
        out = v
        if self.shift_offset is not None:
            out = out + self.shift_offset
        if self.shift_rate is not None:
            out = out + t * self.shift_rate
        return out

    def sample_times(self, t_end=None, count=11):
        t_end = self.T if t_end is None else t_end
        if not t_end:
            return np.zeros(1)
        return np.linspace(0.0, t_end, count)

    def realized_c(self, t_end=None, count=11):
        """Smallest ``c`` with ``c^-1 g0 <= sigma(t) <= c g0`` on sampled times."""
        c = 1.0
        for t in self.sample_times(t_end, count):
            lo, hi = eigen_range(self.sigma(t), self.model.g0)
            c = max(c, hi, 1.0 / lo)
        return c

    def check_positive(self, t_end=None, count=11):
        for t in self.sample_times(t_end, count):
            self.sigma(t).check_positive(METRIC_FLOOR, t=float(t), what="background form")


@dataclass
class Forcing:
    """Forcing ``f(t)``; static ``f0`` unless the callables are supplied."""

    f0: np.ndarray
    C1: Optional[float] = None
    eps: Optional[float] = None
    f_of_t: Optional[Callable[[float], np.ndarray]] = None
    ft_of_t: Optional[Callable[[float], np.ndarray]] = None

    def f(self, t):
        if self.f_of_t is None:
            return self.f0
        return self.f_of_t(t)

    def f_t(self, t):
        if self.ft_of_t is None:
            return np.zeros_like(self.f0)
        return self.ft_of_t(t)

    @property
    def is_static(self):
        return self.f_of_t is None

    def decay_certificate(self, model):
        """``max |f0| (1 + rho^{2+eps})``; at most C1 when the decay holds."""
        if self.eps is None:
            raise ValueError("forcing has no declared decay parameters")
        rho = distance_like(model)
        return float(np.max(np.abs(self.f0) * (1.0 + rho ** (2.0 + self.eps))))


@dataclass
class PrescribedForm:
    """Target Ricci form, built from potentials and therefore closed."""

    omega: HermitianField
    from_potentials: bool = True
    residual: float = 0.0
    meta: dict = field(default_factory=dict)


def zero_forcing(model):
    return Forcing(np.zeros(model.shape))


def make_schedule(kind, model, params=None):
    """Build a background path.

    ``constant``: ``sigma = sigma0`` (default ``g0``).
    ``krf_linear``: ``sigma(t) = g0 - t Ric(g0)``.
    ``interpolation``: linear from ``sigma0`` at 0 to ``sigma_T`` at ``T``.
    """
    params = dict(params or {})
    T = params.pop("T", None)
    if kind == "constant":
        sigma0 = params.pop("sigma0", None) or model.g0
        path = BackgroundPath(kind, model, sigma0, None, T)
    elif kind == "krf_linear":
        path = BackgroundPath(kind, model, model.g0, -ricci_form(model.g0), T)
    elif kind == "interpolation":
        sigma0 = params.pop("sigma0", None) or model.g0
        sigma_T = params.pop("sigma_T")
        if T is None or not T > 0:
            raise ValueError("interpolation schedule needs a horizon T > 0")
        path = BackgroundPath(kind, model, sigma0, (sigma_T - sigma0) / T, T)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if params:
        raise ValueError(f"unused schedule parameters: {sorted(params)}")
    # min eigenvalue is concave along an affine path, so endpoints decide,
    # the interior samples are a cheap guard against rounding surprises
    path.check_positive()
    return path


def _torus_symbol(model):
    """Fourier symbol of the discrete trace operator ``sum_i d_i d_ibar``."""
    k = np.fft.fftfreq(model.resolution, d=1.0 / model.resolution)
    one = -4.0 * np.sin(0.5 * k * model.h) ** 2 / model.h ** 2
    sym = np.zeros(model.shape)
    for axis in range(len(model.shape)):
        view = [1] * len(model.shape)
        view[axis] = model.resolution
        sym = sym + one.reshape(view)
    return 0.25 * sym


def _radial_system(model):
    n_nodes, h = model.resolution, model.h
    rows = sp.lil_matrix((n_nodes, n_nodes))
    # first derivative at s_min (second-order one-sided)
    rows[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    for i in range(1, n_nodes - 1):
        rows[i, i - 1:i + 2] = np.array([1.0, -2.0, 1.0]) / h ** 2
    rows[n_nodes - 1, n_nodes - 1] = 1.0
    return rows.tocsc()


def potential_from_form(form, model, tol=1e-8):
    """Invert the complex Hessian on an exact form.

    Torus: the trace is inverted in Fourier space (zero-mean potential).
    Radial: the second-order radial equation is solved with the slope at
    ``s_min`` and ``f(s_max) = 0``; the full pair is then checked.
    """
    if form.model.shape != model.shape:
        raise ShapeError("form does not belong to this model")
    if model.is_torus:
        trace = np.real(np.trace(form.data, axis1=-2, axis2=-1))
        scale = max(1.0, float(np.max(np.abs(trace))))
        mean = float(np.mean(trace))
        if abs(mean) > 1e-12 * scale:
            raise CompatibilityError(
                f"trace of the form has nonzero mean {mean:.3e}; it is not ddbar-exact",
                residual=abs(mean))
        sym = _torus_symbol(model)
        sym.flat[0] = 1.0
        spec = np.fft.fftn(trace) / sym
        spec.flat[0] = 0.0
        f = np.real(np.fft.ifftn(spec))
    else:
        e = np.exp(model.s)
        rhs = np.empty(model.shape)
        rhs[0] = e[0] * form.data[0, 0]
        rhs[1:-1] = e[1:-1] * form.data[1:-1, 1]
        rhs[-1] = 0.0
        f = spla.spsolve(_radial_system(model), rhs)

    residual = float(np.max(np.abs(complex_hessian(f, model).data - form.data)))
    if residual > tol:
        raise CompatibilityError(
            f"form is not the complex Hessian of a grid potential (residual {residual:.3e})",
            residual=residual)
    return f


def forcing_profile(C1, eps, model):
    """``f0 = C1 / (1 + rho^{2+eps})``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if C1 < 0:
        raise ValueError("C1 must be non-negative")
    rho = distance_like(model)
    return Forcing(C1 / (1.0 + rho ** (2.0 + eps)), C1=float(C1), eps=float(eps))


def prescribed_form(model, f0, tol=1e-10):
    """``Omega = Ric(g0) - ddbar f0`` together with its consistency residual."""
    omega = ricci_form(model.g0) - complex_hessian(f0, model)
    check = ricci_form(model.g0) - omega - complex_hessian(f0, model)
    residual = float(np.max(np.abs(check.data)))
    if residual > tol:
        raise CompatibilityError("prescribed form inconsistent with its forcing", residual)
    return PrescribedForm(omega, True, residual)


def normalize_initial_data(path, forcing, u):
    """Absorb initial data ``u`` and a static forcing into the background.

    Returns ``(path', forcing', v0')`` with ``sigma'(t) = sigma(t) + ddbar(u - t f0)``,
    zero forcing and zero initial data.  A solution ``v'`` corresponds to
    ``v = v' + u - t f0``; the induced metrics agree node-wise.
    """
    model = path.model
    u = model.check_field(np.asarray(u, dtype=float), "u")
    if not forcing.is_static:
        raise ValueError("only static forcing can be absorbed in closed form")
    f0 = forcing.f0
    sigma0 = path.sigma0 + complex_hessian(u, model)
    slope = -complex_hessian(f0, model)
    if path.slope is not None:
        slope = slope + path.slope
    offset = u if path.shift_offset is None else path.shift_offset + u
    rate = -f0 if path.shift_rate is None else path.shift_rate - f0
    new = BackgroundPath(path.kind, model, sigma0, slope, path.T,
                         shift_offset=offset, shift_rate=rate)
    try:
        sigma0.check_positive(METRIC_FLOOR, t=0.0, what="normalized background")
    except DegenerateMetricError as exc:
        raise DegenerateMetricError(
            "sigma + ddbar u is not positive at t = 0; the data cannot be normalized",
            t=0.0, node=exc.node, eigenvalue=exc.eigenvalue) from exc
    return new, zero_forcing(model), np.zeros(model.shape)
