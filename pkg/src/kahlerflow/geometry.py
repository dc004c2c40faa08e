"""Model geometries and pointwise Kaehler-geometric operators.

Two globally coordinatized models are provided:

* ``periodic_torus`` -- the flat torus ``C^n / (2 pi Z)^{2n}`` (n = 1, 2) with
  background metric ``delta_ij + psi_{i jbar}`` for a periodic potential psi.
  Real axes are ordered ``(x_1, y_1, x_2, y_2, ...)``.
* ``radial_plane`` -- U(n)-invariant metrics on ``C^n`` (n >= 2) written in
  the coordinate ``s = log |z|^2`` on a truncated uniform grid.  A radial
  (1,1) form is stored by its two eigenvalues ``(lam_perp, lam_rad)``; for a
  radial potential ``u(s)`` these are ``(e^{-s} u', e^{-s} u'')``.

Complex derivatives follow ``d/dz = (d/dx - i d/dy) / 2``, so on the torus
``u_{z zbar} = (u_xx + u_yy) / 4``.
"""

import math

import numpy as np

from .errors import DegenerateMetricError, NumericBlowupError, ShapeError, UnsupportedError

TORUS = "periodic_torus"
RADIAL = "radial_plane"

# eigenvalues below this are treated as genuine degeneration, not rounding
METRIC_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def _d1_periodic(u, axis, h):
    return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2.0 * h)


def _d2_periodic(u, axis, h):
    # slicing instead of np.roll: this sits in the innermost time-stepping loop
    def at(s):
        return (slice(None),) * axis + (s,)

    out = np.empty_like(u)
    out[at(slice(1, -1))] = u[at(slice(2, None))] + u[at(slice(None, -2))]
    out[at(slice(0, 1))] = u[at(slice(1, 2))] + u[at(slice(-1, None))]
    out[at(slice(-1, None))] = u[at(slice(0, 1))] + u[at(slice(-2, -1))]
    out -= 2.0 * u
    out *= 1.0 / (h * h)
    return out


def _d1_line(u, h):
    """Centered first derivative, second-order one-sided at both ends."""
    return np.gradient(u, h, edge_order=2)


def _d2_line(u, h):
    """Centered second derivative, second-order one-sided at both ends."""
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h)
    out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / (h * h)
    out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / (h * h)
    return out


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class ModelGeometry:
    """A desk-scale Kaehler manifold on a uniform grid.

    Use :meth:`torus` or :meth:`radial` rather than calling the constructor.
    """

    def __init__(self, kind, n, resolution, *, psi=None, s_min=None,
                 s_max=None, p0=None):
        if kind not in (TORUS, RADIAL):
            raise ValueError(f"unknown model kind {kind!r}")
        resolution = int(resolution)
        if resolution < 8:
            raise ValueError("resolution must be >= 8")
        self.kind = kind
        self.n = int(n)
        self.resolution = resolution

        if kind == TORUS:
            if self.n not in (1, 2):
                raise UnsupportedError("torus model supports n = 1 or 2 only")
            self.h = 2.0 * math.pi / resolution
            self.shape = (resolution,) * (2 * self.n)
            self.spacing = (self.h,) * (2 * self.n)
            self.periodic = True
            self.s = None
            if psi is None:
                psi = np.zeros(self.shape)
            psi = np.asarray(psi, dtype=float)
            if psi.shape != self.shape:
                raise ShapeError(f"psi has shape {psi.shape}, expected {self.shape}")
            self.psi = psi
            self.p0 = None
            self.flat = not np.any(psi)
        else:
            if self.n < 2:
                raise UnsupportedError("radial model needs n >= 2")
            s_min = -8.0 if s_min is None else float(s_min)
            s_max = 10.0 if s_max is None else float(s_max)
            if not s_min < s_max:
                raise ValueError("s_min must be < s_max")
            self.s_min, self.s_max = s_min, s_max
            self.s = np.linspace(s_min, s_max, resolution)
            self.h = (s_max - s_min) / (resolution - 1)
            self.shape = (resolution,)
            self.spacing = (self.h,)
            self.periodic = False
            self.psi = None
            self.flat = p0 is None
            if p0 is None:
                e = np.exp(self.s)
                p0 = (e, e.copy(), e.copy())
            p0 = tuple(np.asarray(a, dtype=float) for a in p0)
            if len(p0) != 3 or any(a.shape != self.shape for a in p0):
                raise ShapeError("p0 must be three arrays (P0, P0', P0'') on the s-grid")
            if np.any(p0[1] <= 0) or np.any(p0[2] <= 0):
                raise DegenerateMetricError("radial background needs P0' > 0 and P0'' > 0")
            self.p0 = p0

        self._g0 = None
        self._g0_logdet = None

    @classmethod
    def torus(cls, n=1, resolution=64, psi=None):
        return cls(TORUS, n, resolution, psi=psi)

    @classmethod
    def radial(cls, n=2, resolution=512, s_min=-8.0, s_max=10.0, p0=None):
        return cls(RADIAL, n, resolution, s_min=s_min, s_max=s_max, p0=p0)

    def __repr__(self):
        if self.kind == TORUS:
            return f"ModelGeometry(torus, n={self.n}, N={self.resolution})"
        return (f"ModelGeometry(radial, n={self.n}, N={self.resolution}, "
                f"s=[{self.s_min}, {self.s_max}])")

    @property
    def is_torus(self):
        return self.kind == TORUS

    @property
    def size(self):
        return int(np.prod(self.shape))

    def coordinate(self, axis):
        """Broadcastable coordinate array along a real axis.

        Torus axes are ``x_1, y_1, x_2, y_2, ...``; the radial model has the
        single axis ``s``.
        """
        if not self.is_torus:
            return self.s
        view = [1] * len(self.shape)
        view[axis] = self.resolution
        return (np.arange(self.resolution) * self.h).reshape(view)

    def x(self, i=0):
        return self.coordinate(2 * i)

    def y(self, i=0):
        return self.coordinate(2 * i + 1)

    def field(self, values):
        """Broadcast ``values`` to a full grid field (float64 copy)."""
        out = np.empty(self.shape)
        out[...] = values
        return out

    def check_field(self, u, name="field"):
        u = np.asarray(u)
        if u.shape != self.shape:
            raise ShapeError(f"{name} has shape {u.shape}, model grid is {self.shape}")
        return u

    def cell_volume(self):
        """Euclidean volume weights per node (scalar on the torus).

        On the radial model the weight of node ``s_i`` is the Lebesgue volume
        ``pi^n/(n-1)! e^{n s} ds`` of the shell it represents (trapezoid ends).
        """
        if self.is_torus:
            return self.h ** (2 * self.n)
        w = math.pi ** self.n / math.factorial(self.n - 1) * np.exp(self.n * self.s) * self.h
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def integrate(self, density):
        """Sum of ``density * cell volume`` over the grid."""
        return float(np.sum(density * self.cell_volume()))

    def identity(self):
        return HermitianField.identity(self)

    @property
    def g0(self):
        if self._g0 is None:
            if self.is_torus:
                g0 = self.identity() + complex_hessian(self.psi, self)
            elif self.flat:
                # exact ones rather than e^{-s} e^s
                g0 = HermitianField.identity(self)
            else:
                e = np.exp(-self.s)
                g0 = HermitianField(np.stack([e * self.p0[1], e * self.p0[2]], axis=-1), self)
            lam = g0.min_eig()
            if np.min(lam) <= METRIC_FLOOR:
                node = int(np.argmin(lam))
                raise DegenerateMetricError("background metric is not positive definite",
                                            node=node, eigenvalue=float(lam.flat[node]))
            self._g0 = g0
        return self._g0

    @property
    def g0_logdet(self):
        if self._g0_logdet is None:
            self._g0_logdet = self.g0.logdet()
        return self._g0_logdet

    # internal derivative helpers ------------------------------------------------

    def d1(self, u, axis=0):
        if self.is_torus:
            return _d1_periodic(u, axis, self.h)
        return _d1_line(u, self.h)

    def d2(self, u, axis=0):
        if self.is_torus:
            return _d2_periodic(u, axis, self.h)
        return _d2_line(u, self.h)

    def dz(self, u):
        """Holomorphic derivatives ``d u / d z_i`` (list, torus only)."""
        return [0.5 * (self.d1(u, 2 * i) - 1j * self.d1(u, 2 * i + 1)) for i in range(self.n)]


# ---------------------------------------------------------------------------
# Hermitian fields
# ---------------------------------------------------------------------------

class HermitianField:
    """One Hermitian n x n matrix per grid node.

    Torus data has shape ``grid + (n, n)`` (real for n = 1, complex for
    n = 2).  Radial data has shape ``(N, 2)`` holding ``(lam_perp, lam_rad)``;
    ``lam_perp`` has multiplicity ``n - 1``.
    """

    __slots__ = ("data", "model")

    def __init__(self, data, model):
        data = np.asarray(data)
        expected = model.shape + ((model.n, model.n) if model.is_torus else (2,))
        if data.shape != expected:
            raise ShapeError(f"Hermitian data has shape {data.shape}, expected {expected}")
        self.data = data
        self.model = model

    @classmethod
    def identity(cls, model):
        if model.is_torus:
            eye = np.eye(model.n) if model.n == 1 else np.eye(model.n, dtype=complex)
            return cls(np.broadcast_to(eye, model.shape + eye.shape).copy(), model)
        return cls(np.ones(model.shape + (2,)), model)

    @classmethod
    def zeros(cls, model):
        return cls(np.zeros_like(cls.identity(model).data), model)

    @classmethod
    def scalar(cls, values, model):
        """``values * identity`` node-wise."""
        values = model.check_field(values, "scalar")
        return cls(cls.identity(model).data * (values[..., None, None] if model.is_torus
                                               else values[..., None]), model)

    def _same(self, other):
        if other.model is not self.model:
            if other.model.shape != self.model.shape or other.model.kind != self.model.kind:
                raise ShapeError("Hermitian fields live on different models")

    def __add__(self, other):
        self._same(other)
        return HermitianField(self.data + other.data, self.model)

    def __sub__(self, other):
        self._same(other)
        return HermitianField(self.data - other.data, self.model)

    def __neg__(self):
        return HermitianField(-self.data, self.model)

    def __mul__(self, c):
        return HermitianField(self.data * c, self.model)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return HermitianField(self.data / c, self.model)

    def copy(self):
        return HermitianField(self.data.copy(), self.model)

    def __repr__(self):
        return f"HermitianField({self.model!r})"

    # algebra ------------------------------------------------------------------

    def det(self):
        d = self.data
        if self.model.is_torus:
            if self.model.n == 1:
                return np.real(d[..., 0, 0])
            return np.real(d[..., 0, 0] * d[..., 1, 1]) - np.abs(d[..., 0, 1]) ** 2
        return d[..., 0] ** (self.model.n - 1) * d[..., 1]

    def logdet(self):
        if not self.model.is_torus:
            d = self.data
            return (self.model.n - 1) * np.log(d[..., 0]) + np.log(d[..., 1])
        return np.log(self.det())

    def trace(self):
        if self.model.is_torus:
            return np.real(np.trace(self.data, axis1=-2, axis2=-1))
        return (self.model.n - 1) * self.data[..., 0] + self.data[..., 1]

    def eigvals(self):
        """Node-wise eigenvalues, last axis (radial: the distinct pair)."""
        d = self.data
        if not self.model.is_torus:
            return d
        if self.model.n == 1:
            return np.real(d[..., 0, :])
        a, c = np.real(d[..., 0, 0]), np.real(d[..., 1, 1])
        b = np.abs(d[..., 0, 1])
        mean = 0.5 * (a + c)
        rad = np.hypot(0.5 * (a - c), b)
        return np.stack([mean - rad, mean + rad], axis=-1)

    def min_eig(self):
        if self.model.is_torus and self.model.n == 1:
            return self.data[..., 0, 0]
        return np.min(self.eigvals(), axis=-1)

    def max_eig(self):
        return np.max(self.eigvals(), axis=-1)

    def inv(self):
        d = self.data
        if not self.model.is_torus:
            return HermitianField(1.0 / d, self.model)
        if self.model.n == 1:
            return HermitianField(1.0 / d, self.model)
        det = self.det()
        out = np.empty_like(d)
        out[..., 0, 0] = d[..., 1, 1] / det
        out[..., 1, 1] = d[..., 0, 0] / det
        out[..., 0, 1] = -d[..., 0, 1] / det
        out[..., 1, 0] = -d[..., 1, 0] / det
        return HermitianField(out, self.model)

    def inv_trace(self, other):
        """``tr(self^{-1} other)`` node-wise (``self^{ij} other_{ij}``)."""
        if not self.model.is_torus:
            n = self.model.n
            return (n - 1) * other.data[..., 0] / self.data[..., 0] + other.data[..., 1] / self.data[..., 1]
        if self.model.n == 1:
            return np.real(other.data[..., 0, 0]) / np.real(self.data[..., 0, 0])
        inv = self.inv().data
        return np.real(np.einsum("...ij,...ji->...", inv, other.data))

    def norm_sq(self, other):
        """Squared norm of the form ``other`` measured by the metric ``self``."""
        if not self.model.is_torus:
            n = self.model.n
            r = other.data / self.data
            return (n - 1) * r[..., 0] ** 2 + r[..., 1] ** 2
        if self.model.n == 1:
            return (np.real(other.data[..., 0, 0]) / np.real(self.data[..., 0, 0])) ** 2
        m = np.matmul(self.inv().data, other.data)
        return np.real(np.einsum("...ij,...ji->...", m, m))

    def check_positive(self, floor=METRIC_FLOOR, t=None, what="metric"):
        """Return the smallest eigenvalue; raise if it is not above ``floor``."""
        lam = self.min_eig()
        low = float(np.min(lam))
        if low > floor:
            return low
        if np.isnan(low):
            raise NumericBlowupError(f"non-finite {what}" + ("" if t is None else f" at t={t:.6g}"), t=t)
        worst = int(np.argmin(lam))
        raise DegenerateMetricError(
            f"{what} degenerate at node {worst}: min eigenvalue {low:.3e}"
            + ("" if t is None else f" (t={t:.6g})"),
            t=t, node=worst, eigenvalue=low)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def complex_hessian(u, model):
    """``u_{i jbar}`` via second-order finite differences."""
    u = model.check_field(u, "u")
    if not model.is_torus:
        e = np.exp(-model.s)
        return HermitianField(np.stack([e * model.d1(u), e * model.d2(u)], axis=-1), model)

    n = model.n
    if n == 1:
        h = 0.25 * (model.d2(u, 0) + model.d2(u, 1))
        return HermitianField(h[..., None, None], model)

    out = np.zeros(model.shape + (n, n), dtype=complex)
    for i in range(n):
        out[..., i, i] = 0.25 * (model.d2(u, 2 * i) + model.d2(u, 2 * i + 1))
        dxi = model.d1(u, 2 * i)
        dyi = model.d1(u, 2 * i + 1)
        for j in range(i + 1, n):
            re = model.d1(dxi, 2 * j) + model.d1(dyi, 2 * j + 1)
            im = model.d1(dxi, 2 * j + 1) - model.d1(dyi, 2 * j)
            out[..., i, j] = 0.25 * (re + 1j * im)
            out[..., j, i] = 0.25 * (re - 1j * im)
    return HermitianField(out, model)


def laplacian(u, g, floor=METRIC_FLOOR):
    """``Delta_g u = g^{i jbar} u_{i jbar}``."""
    g.check_positive(floor)
    return g.inv_trace(complex_hessian(u, g.model))


def ricci_form(g, floor=METRIC_FLOOR):
    """``R_{i jbar} = -d_i d_jbar log det g``.

    On the radial model ``-log det g`` equals the potential
    ``n s - (n-1) log P' - log P''`` of the Ricci form.
    """
    g.check_positive(floor)
    return complex_hessian(-g.logdet(), g.model)


def _radial_coefficients(lam_perp, lam_rad, model):
    """``a_k e^{-s}`` where ``a_k = t^k F^(k)(t)`` for the potential of ``(lam_perp, lam_rad)``.

    Derivatives are taken of ``log lam_rad`` rather than of ``e^s lam_rad``,
    so a flat metric gives exactly zero and truncation errors stay bounded at
    both ends of the s-range.
    """
    # differentiate log lam_rad: bounded at both ends for the usual profiles
    ell = np.log(lam_rad)
    l1 = model.d1(ell)
    d1 = lam_rad * l1
    d2 = lam_rad * (model.d2(ell) + l1 ** 2)
    b1 = lam_perp
    b2 = lam_rad - lam_perp
    b3 = d1 - 2.0 * lam_rad + 2.0 * lam_perp
    b4 = d2 - 4.0 * d1 + 6.0 * lam_rad - 6.0 * lam_perp
    return b1, b2, b3, b4


def curvature_norm(g, floor=METRIC_FLOOR):
    """Pointwise ``|Rm|_g`` of the Kaehler metric ``g``.

    Torus n = 1: ``R_{1 1bar 1 1bar} = -g_{z zbar} + |g_z|^2 / g``.
    Radial: the four independent components of a U(n)-invariant metric
    (radial, mixed, tangential-diagonal, tangential-off) evaluated from the
    eigenvalues and the s-derivatives of ``lam_rad``.
    """
    model = g.model
    g.check_positive(floor)
    if model.is_torus:
        if model.n != 1:
            raise UnsupportedError("curvature_norm on the torus is implemented for n = 1")
        lam = g.data[..., 0, 0]
        hess = complex_hessian(lam, model).data[..., 0, 0]
        dz = model.dz(lam)[0]
        r = -hess + np.abs(dz) ** 2 / lam
        return np.abs(r) / lam ** 2

    n = model.n
    lp, lr = g.data[:, 0], g.data[:, 1]
    b1, b2, b3, b4 = _radial_coefficients(lp, lr, model)
    r_rad = -(2 * b2 + 4 * b3 + b4) + (2 * b2 + b3) ** 2 / lr
    r_mix = -(b2 + b3) + b2 ** 2 / b1
    total = (r_rad / lr ** 2) ** 2
    total = total + 4 * (n - 1) * (r_mix / (lp * lr)) ** 2
    total = total + (n - 1) * (2 * b2 / lp ** 2) ** 2
    total = total + 2 * (n - 1) * (n - 2) * (b2 / lp ** 2) ** 2
    return np.exp(-model.s) * np.sqrt(total)


def distance_like(model):
    """A smooth ``rho >= 1`` comparable to the distance from the origin.

    Radial: ``sqrt(1 + |z|^2)``.  The torus is compact, so ``rho = 1``.
    """
    if model.is_torus:
        return np.ones(model.shape)
    return np.sqrt(1.0 + np.exp(model.s))


def generalized_eigvals(a, b, floor=METRIC_FLOOR):
    """Node-wise eigenvalues of ``b^{-1} a`` (last axis)."""
    a._same(b)
    b.check_positive(floor, what="reference form")
    if not a.model.is_torus:
        return a.data / b.data
    if a.model.n == 1:
        return np.real(a.data[..., 0, :]) / np.real(b.data[..., 0, :])
    # det(a - lam b) = 0 as a real quadratic in lam
    A, B = a.data, b.data
    qa = b.det()
    qb = -(np.real(A[..., 0, 0] * B[..., 1, 1] + A[..., 1, 1] * B[..., 0, 0])
           - 2.0 * np.real(A[..., 0, 1] * np.conj(B[..., 0, 1])))
    qc = a.det()
    disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
    root = np.sqrt(disc)
    # numerically stable pair of roots
    q = -0.5 * (qb + np.copysign(root, qb))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = q / qa
        r2 = np.where(q != 0, qc / q, -qb / (2 * qa))
    return np.sort(np.stack([r1, r2], axis=-1), axis=-1)


def eigen_range(a, b, floor=METRIC_FLOOR):
    """Global ``(min, max)`` of the eigenvalues of ``b^{-1} a`` over all nodes."""
    lam = generalized_eigvals(a, b, floor)
    return float(np.min(lam)), float(np.max(lam))
