"""Torus-invariant deformations of the hyperbolic cusp and the mass/period law.

In the orthonormal coframe (dr/r, r dx_1, ..., r dx_{n-1}) a torus-invariant
symmetric form splits into three classes of components:

* ``ab``  torus-torus (trace-free part),
* ``1b``  radial-torus,
* ``11``  radial-radial, paired with -1/(n-1) of it on the torus diagonal
  so that the form stays trace-free.

On each class the linearized Einstein operator reduces to an Euler
equation r^2 h'' + B r h' + C h = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .curvature import connection, metric_derivatives, riemann
from .errors import DimensionError, DomainError
from .metrics import ProfileMetric, horizon_radius, theta_period, v_derivatives

CLASSES = ("ab", "1b", "11")


def _check_class(cls):
    if cls not in CLASSES:
        raise DomainError(f"unknown component class {cls!r}; expected one of {CLASSES}")


def _check_n(n):
    if int(n) != n or n < 3:
        raise DimensionError(f"dimension must be an integer >= 3, got {n}")
    return int(n)


@dataclass(frozen=True)
class EulerODE:
    """r^2 h'' + B r h' + C h = 0."""

    n: int
    cls: str
    B: float
    C: float

    def residual(self, h, dh, d2h, r):
        return r * r * d2h + self.B * r * dh + self.C * h

    def indicial(self, alpha):
        """alpha^2 + (B - 1) alpha + C, zero exactly at the exponents."""
        return alpha * alpha + (self.B - 1) * alpha + self.C

    def __str__(self):
        c = f" {'+' if self.C >= 0 else '-'} {abs(self.C):g}h" if self.C else ""
        return f"r^2 h'' + {self.B:g} r h'{c} = 0"


def euler_coeffs(n, cls):
    n = _check_n(n)
    _check_class(cls)
    C = {"ab": 0, "1b": -n, "11": -2 * (n - 1)}[cls]
    return EulerODE(n, cls, n, C)


@dataclass(frozen=True)
class ModeClassification:
    cls: str
    n: int
    exponents: tuple
    bounded_dim: int
    bounded_basis: str


def closed_form_modes(n, cls):
    """Indicial exponents (larger first) and the bounded solutions on (0, inf)."""
    ode = euler_coeffs(n, cls)
    b = ode.B - 1
    disc = b * b - 4 * ode.C
    root = math.sqrt(disc)
    hi, lo = (-b + root) / 2, (-b - root) / 2
    # r^alpha stays bounded at both ends only for alpha = 0, and two
    # distinct exponents of opposite sign cannot cancel each other's growth
    zero = [a for a in (hi, lo) if a == 0]
    basis = "constants" if zero else "none"
    return ModeClassification(cls, ode.n, (hi, lo), len(zero), basis)


def closed_form_solution(n, cls, h0, dh0, r0=1.0):
    """The solution with h(r0) = h0, h'(r0) = dh0, as a callable of r."""
    a1, a2 = closed_form_modes(n, cls).exponents
    m = np.array([[r0**a1, r0**a2], [a1 * r0 ** (a1 - 1), a2 * r0 ** (a2 - 1)]])
    c1, c2 = np.linalg.solve(m, [h0, dh0])

    def h(r):
        r = np.asarray(r, dtype=float)
        return c1 * r**a1 + c2 * r**a2

    h.coefficients = (c1, c2)
    h.exponents = (a1, a2)
    return h


@dataclass(frozen=True)
class ModeProfile:
    r: np.ndarray
    h: np.ndarray
    dh: np.ndarray


def integrate_mode(n, cls, h0, dh0, r_range, steps=200, r0=1.0, rtol=1e-10):
    """Integrate the class's Euler equation from r0 with adaptive RK45.

    Works in t = log r, where the equation has constant coefficients.
    Samples are log-spaced over ``r_range`` (``steps`` of them).
    """
    ode = euler_coeffs(n, cls)
    lo, hi = r_range
    if not (lo > 0 and hi > lo and r0 > 0):
        raise DomainError(f"radial range must lie in (0, inf) with r_lo < r_hi, got {r_range}")
    rs = np.geomspace(lo, hi, steps)
    ts = np.log(rs)
    t0 = math.log(r0)

    def rhs(t, y):
        return [y[1], -(ode.B - 1) * y[1] - ode.C * y[0]]

    y0 = [h0, r0 * dh0]
    out = np.empty((2, steps))
    for mask, end in ((ts >= t0, ts[-1]), (ts < t0, ts[0])):
        if not mask.any() or end == t0:
            out[:, mask] = np.array(y0)[:, None]
            continue
        sol = solve_ivp(rhs, (t0, end), y0, method="RK45", t_eval=ts[mask][::1 if end > t0 else -1],
                        rtol=rtol, atol=1e-14 * max(1.0, abs(h0), abs(dh0)))
        if not sol.success:
            raise DomainError(f"integration failed ({sol.message}); the step size underflowed")
        vals = sol.y if end > t0 else sol.y[:, ::-1]
        out[:, mask] = vals
    return ModeProfile(rs, out[0], out[1] / rs)


def relative_error(n, cls, profile, h0, dh0, r0=1.0):
    """max |numeric - exact| / (|c1| r^a1 + |c2| r^a2) over the samples."""
    exact = closed_form_solution(n, cls, h0, dh0, r0)
    (c1, c2), (a1, a2) = exact.coefficients, exact.exponents
    scale = abs(c1) * profile.r**a1 + abs(c2) * profile.r**a2
    return float(np.max(np.abs(profile.h - exact(profile.r)) / scale))


def _solution_matrix(n, cls, radii):
    """Rows: h(r) at each radius for the initial data (1, 0) and (0, 1) at r = 1."""
    rows = []
    for r in radii:
        rng = (min(r, 1.0), max(r, 1.0)) if r != 1.0 else (1.0, 1.0 + 1e-9)
        cols = []
        for ic in ((1.0, 0.0), (0.0, 1.0)):
            prof = integrate_mode(n, cls, ic[0], ic[1], rng, steps=2)
            cols.append(prof.h[-1] if r >= 1 else prof.h[0])
        rows.append(cols)
    return np.array(rows)


def _bounded_subspace(mat, bound):
    _, sv, vt = np.linalg.svd(mat)
    sv = np.concatenate([sv, np.zeros(vt.shape[0] - len(sv))])
    return vt[sv <= bound]


def bounded_dimension_numeric(n, cls, far=(1e2, 1e3, 1e4), near=(1e-2, 1e-3, 1e-4), bound=100.0):
    """Dimension of initial data whose solution stays below ``bound`` at all
    sample radii, found by integrating out to 1e4 and in to 1e-4."""
    up = _bounded_subspace(_solution_matrix(n, cls, far), bound)
    down = _bounded_subspace(_solution_matrix(n, cls, near), bound)
    if len(up) == 0 or len(down) == 0:
        return 0
    joint = np.vstack([up, down])
    return len(up) + len(down) - int(np.linalg.matrix_rank(joint, tol=1e-8))


# --------------------------------------------------------------------------
# the linearized operator on the cusp


class InvariantForm:
    """A torus-invariant symmetric form given by frame components H(r).

    ``components`` maps r to an n x n symmetric array in the coframe
    (dr/r, r dx_1, ...).  With ``trace_free`` the trace is checked on use.
    """

    def __init__(self, n, components, trace_free=False):
        self.n = _check_n(n)
        self.components = components
        self.trace_free = trace_free

    def __call__(self, r):
        h = np.asarray(self.components(r), dtype=float)
        if h.shape != (self.n, self.n):
            raise DimensionError(f"form must be {self.n}x{self.n}, got {h.shape}")
        if np.max(np.abs(h - h.T)) > 1e-12 * max(1.0, np.max(np.abs(h))):
            raise DomainError("form is not symmetric")
        if self.trace_free and abs(np.trace(h)) > 1e-10 * max(1.0, np.max(np.abs(h))):
            raise DomainError("form was declared trace-free but has nonzero trace")
        return h

    @classmethod
    def of_class(cls, n, kind, f):
        """Scalar profile f placed in the standard unit form of a class."""
        _check_class(kind)
        e = class_form(n, kind)
        return cls(n, lambda r: f(r) * e, trace_free=True)


def class_form(n, kind):
    """Constant trace-free frame form spanning one component class."""
    e = np.zeros((n, n))
    if kind == "ab":
        e[1, 2] = e[2, 1] = 1.0
    elif kind == "1b":
        e[0, 1] = e[1, 0] = 1.0
    else:
        e[0, 0] = 1.0
        for i in range(1, n):
            e[i, i] = -1.0 / (n - 1)
    return e


def _cusp_chart(n):
    def metric_fn(x):
        r = x[:, 0]
        out = np.zeros((len(r), n, n))
        out[:, 0, 0] = r**-2
        for i in range(1, n):
            out[:, i, i] = r**2
        return out

    return metric_fn


def _frame_scale(r, n):
    e = np.full(n, r)
    e[0] = 1.0 / r
    return np.outer(e, e)


def linearized_invariant(g, h, r, rel_step=1e-3):
    """D*Dh - 2R(h) + Ric.h + h.Ric + 2(n-1)h for a torus-invariant h on the cusp.

    Everything is computed in coordinates (r, x_i) from the metric
    components; the result is returned in the orthonormal coframe.
    """
    if not isinstance(g, ProfileMetric) or g.kind != "cusp":
        raise DomainError("the invariant reduction is set up on the hyperbolic cusp")
    if not isinstance(h, InvariantForm):
        raise DomainError("h must be an InvariantForm (a form depending on r only)")
    n = g.n
    if h.n != n:
        raise DimensionError(f"form has n={h.n}, metric has n={n}")
    x = np.zeros(n)
    x[0] = r
    steps = np.full(n, rel_step * r)
    gfn = _cusp_chart(n)
    gm, dg, ddg = metric_derivatives(gfn, x, steps)
    gam, dgam = connection(gm, dg, ddg)
    rm, _ = riemann(gm, dg, ddg)
    ginv = np.linalg.inv(gm)
    ric = np.einsum("ac,abcd->bd", ginv, rm)

    def hfn(pts):
        return np.array([h(p[0]) * _frame_scale(p[0], n) for p in pts])

    hc, dh, ddh = metric_derivatives(hfn, x, steps)
    # first covariant derivative nh[c, a, b] and its coordinate derivative
    nh = dh - np.einsum("eca,eb->cab", gam, hc) - np.einsum("ecb,ae->cab", gam, hc)
    dnh = (ddh
           - np.einsum("deca,eb->dcab", dgam, hc) - np.einsum("eca,deb->dcab", gam, dh)
           - np.einsum("decb,ae->dcab", dgam, hc) - np.einsum("ecb,dae->dcab", gam, dh))
    nnh = (dnh - np.einsum("edc,eab->dcab", gam, nh)
           - np.einsum("eda,ceb->dcab", gam, nh) - np.einsum("edb,cae->dcab", gam, nh))
    rough = -np.einsum("dc,dcab->ab", ginv, nnh)
    hup = ginv @ hc @ ginv
    rh = np.einsum("acbd,cd->ab", rm, hup)
    comp = ric @ ginv @ hc + hc @ ginv @ ric
    out = rough - 2 * rh + comp + 2 * (n - 1) * hc
    return out / _frame_scale(r, n)


def euler_operator(n, cls, f, r, rel_step=1e-3):
    """-(r^2 f'' + B r f' + C f) with derivatives of f by central differences."""
    ode = euler_coeffs(n, cls)
    h = rel_step * r
    f0 = f(r)

    def d(hh):
        fp, fm = f(r + hh), f(r - hh)
        return (fp - fm) / (2 * hh), (fp - 2 * f0 + fm) / hh**2

    d1a, d2a = d(h)
    d1b, d2b = d(h / 2)
    d1 = (4 * d1b - d1a) / 3
    d2 = (4 * d2b - d2a) / 3
    return -ode.residual(f0, d1, d2, r)


# --------------------------------------------------------------------------
# cone angle and the mass / period law


def cone_angle(n, m, beta):
    """Total angle at the horizon when theta has period beta: beta V'(r_+)/2."""
    if not (m > 0 and beta > 0):
        raise DomainError("mass and period must be positive")
    rp = horizon_radius(n, m)
    _, dv, _ = v_derivatives(n, m, rp)
    return beta * dv / 2


def mass_from_beta(n, beta, method="closed"):
    """Mass whose smooth period is beta.

    ``closed`` inverts beta = 4 pi / ((n-1)(2m)^{1/(n-1)}); ``shoot``
    brackets the root of cone_angle(n, m, beta) = 2 pi in log m.
    """
    n = _check_n(n)
    if not beta > 0:
        raise DomainError(f"period must be positive, got {beta}")
    if method == "closed":
        return 0.5 * (4 * math.pi / ((n - 1) * beta)) ** (n - 1)
    if method != "shoot":
        raise DomainError(f"unknown method {method!r}")

    def gap(logm):
        return cone_angle(n, math.exp(logm), beta) - 2 * math.pi

    lo, hi = -1.0, 1.0
    while gap(lo) > 0:
        lo *= 2
    while gap(hi) < 0:
        hi *= 2
    return math.exp(brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def beta_derivative(n, m, rel_step=1e-6):
    """d beta / d m by a central difference."""
    h = rel_step * m
    return (theta_period(n, m + h) - theta_period(n, m - h)) / (2 * h)
