"""Model metrics of the form  F(r)^{-1} dr^2 + F(r) dtheta^2 + r^2 ds^2.

Every model here is stored through one radial profile F and two constant
forms on the cross-section torus:

* ``theta_form``  (Theta) - the square of the angular 1-form, so that the
  angular circle contributes F(r) * Theta,
* ``fiber_form``  (S)     - the flat metric on the remaining directions,
  contributing r^2 * S.

The cross-section Gram at radius r is therefore F(r) Theta + r^2 S, written
in the lattice basis of the torus.  The three kinds are

* cusp        F = r^2 (Theta may be zero),
* black_hole  F = V = r^2 - 2m r^{3-n},
* glued       F = r^2 - 2m chi(r) r^{3-n} with a cutoff chi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import DimensionError, DomainError, SeamMismatchError
from .lattice import CompletedBasis, Lattice, as_curve, complete_basis, curve_length

SEAM_TOL = 1e-8


def _check_dim(n):
    if int(n) != n or n < 3:
        raise DimensionError(f"dimension must be an integer >= 3, got {n}")
    return int(n)


def _check_mass(m):
    if not m > 0:
        raise DomainError(f"mass must be positive, got {m}")


def _positive_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("radius must be positive")
    return r


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def v_profile(n, m, r):
    """V(r) = r^2 - 2m r^{-(n-3)}."""
    n = _check_dim(n)
    r = _positive_r(r)
    return _out(r**2 - 2 * m * r ** (3 - n))


def v_derivatives(n, m, r):
    """(V, V', V'') at r."""
    n = _check_dim(n)
    r = _positive_r(r)
    v = r**2 - 2 * m * r ** (3 - n)
    dv = 2 * r + 2 * m * (n - 3) * r ** (2 - n)
    d2v = 2 - 2 * m * (n - 3) * (n - 2) * r ** (1 - n)
    return _out(v), _out(dv), _out(d2v)


def horizon_radius(n, m):
    """r_+ = (2m)^{1/(n-1)}, the zero of V."""
    _check_mass(m)
    return (2 * m) ** (1.0 / (_check_dim(n) - 1))


def theta_period(n, m):
    """beta = 4 pi / ((n-1) r_+), the period that closes the horizon smoothly."""
    return 4 * math.pi / ((_check_dim(n) - 1) * horizon_radius(n, m))


@dataclass(frozen=True)
class BlackHoleParams:
    n: int
    m: float
    r_plus: float
    beta: float
    twist: CompletedBasis | None = None


def bh_params(n, m, twist=None):
    """Horizon radius and angular period for mass m."""
    n = _check_dim(n)
    _check_mass(m)
    if twist is not None and len(twist.matrix) != n - 1:
        raise DimensionError(f"twist basis must be {n - 1}x{n - 1}")
    return BlackHoleParams(n, float(m), horizon_radius(n, m), theta_period(n, m), twist)


def match_radius(n, m, length):
    """Radius R > r_+ with sqrt(V(R)) * beta equal to ``length``."""
    n = _check_dim(n)
    if not length > 0 or not math.isfinite(length):
        raise DomainError(f"curve length must be positive and finite, got {length}")
    rp = horizon_radius(n, m)
    beta = theta_period(n, m)

    def gap(r):
        return math.sqrt(max(v_profile(n, m, r), 0.0)) * beta - length

    hi = rp + length / beta + 1.0
    while gap(hi) <= 0:
        hi *= 2
    root = brentq(gap, rp, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return root


# --------------------------------------------------------------------------
# cutoff


def _smooth_step(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    z = 1.0 / (1.0 - xs) - 1.0 / xs
    s = expit(z)
    s1m = expit(-z)
    a = 1.0 / xs**2 + 1.0 / (1.0 - xs) ** 2
    da = -2.0 / xs**3 + 2.0 / (1.0 - xs) ** 3
    w = s * s1m
    ds = w * a
    d2s = ds * (1 - 2 * s) * a + w * da
    s = np.where(inside, s, np.where(x >= 1, 1.0, 0.0))
    ds = np.where(inside, ds, 0.0)
    d2s = np.where(inside, d2s, 0.0)
    return s, ds, d2s


def _quintic_step(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    s = x**3 * (10 - 15 * x + 6 * x**2)
    ds = 30 * x**2 * (1 - x) ** 2
    d2s = 60 * x * (1 - x) * (1 - 2 * x)
    return s, ds, d2s


_STEPS = {"smooth": _smooth_step, "quintic": _quintic_step}


@dataclass(frozen=True)
class CutoffSpec:
    """Transition profile: ``smooth`` (C-infinity) or ``quintic`` (C^2)."""

    kind: str = "smooth"

    def __post_init__(self):
        if self.kind not in _STEPS:
            raise DomainError(f"unknown cutoff kind {self.kind!r}; expected one of {sorted(_STEPS)}")


@dataclass(frozen=True)
class GlueSpec:
    """Matching radius and cutoff. chi = 1 below R/2 and 0 above 2R."""

    R: float
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)

    def chi(self, r):
        """(chi, chi', chi'') at r, with chi(r) = step(log(2R/r) / log 4)."""
        r = _positive_r(r)
        log4 = math.log(4.0)
        x = np.log(2 * self.R / r) / log4
        dx = -1.0 / (r * log4)
        d2x = 1.0 / (r**2 * log4)
        s, ds, d2s = _STEPS[self.cutoff.kind](x)
        return _out(s), _out(ds * dx), _out(d2s * dx**2 + ds * d2x)


# --------------------------------------------------------------------------
# profile metrics


@dataclass(frozen=True, eq=False)
class ProfileMetric:
    """A cohomogeneity-one metric F^{-1}dr^2 + F Theta + r^2 S on (r_lo, r_hi).

    Use the constructors ``cusp_metric``, ``black_hole_metric`` and
    ``glue`` rather than building one directly.
    """

    kind: str
    n: int
    r_lo: float
    r_hi: float
    theta_form: np.ndarray
    fiber_form: np.ndarray
    m: float = 0.0
    params: BlackHoleParams | None = None
    spec: GlueSpec | None = None
    cusp: "ProfileMetric | None" = None
    black_hole: "ProfileMetric | None" = None

    # -- radial profile --------------------------------------------------

    def profile(self, r):
        """(F, F', F'') at r."""
        r = np.asarray(r, dtype=float)
        if self.kind == "cusp":
            return _out(r**2), _out(2 * r), _out(np.full_like(r, 2.0))
        if self.kind == "black_hole":
            return v_derivatives(self.n, self.m, r)
        return self._glued_profile(r)

    def _glued_profile(self, r):
        R = self.spec.R
        inner = self.black_hole.profile(r)
        outer = self.cusp.profile(r)
        chi, dchi, d2chi = self.spec.chi(r)
        n, m = self.n, self.m
        p = 3 - n
        # psi = chi * r^p and its derivatives
        psi = chi * r**p
        dpsi = dchi * r**p + p * chi * r ** (p - 1)
        d2psi = d2chi * r**p + 2 * p * dchi * r ** (p - 1) + p * (p - 1) * chi * r ** (p - 2)
        mid = (r**2 - 2 * m * psi, 2 * r - 2 * m * dpsi, 2 - 2 * m * d2psi)
        lo = r <= R / 2
        hi = r >= 2 * R
        return tuple(_out(np.where(lo, a, np.where(hi, b, c))) for a, b, c in zip(inner, outer, mid))

    def F(self, r):
        return self.profile(r)[0]

    def g_rr(self, r):
        return _out(1.0 / np.asarray(self.F(r)))

    def g_thth(self, r):
        return self.F(r)

    def warp(self, r):
        return _out(np.asarray(r, dtype=float) ** 2)

    # -- cross-section ---------------------------------------------------

    @property
    def dim(self):
        return self.n - 1

    def cross_gram(self, r):
        """Gram of the cross-section torus at radius r (lattice basis)."""
        if self.kind == "glued":
            R = self.spec.R
            if r <= R / 2:
                return self.black_hole.cross_gram(r)
            if r >= 2 * R:
                return self.cusp.cross_gram(r)
        f = self.F(r)
        return f * self.theta_form + r * r * self.fiber_form

    @property
    def coordinate_torus(self):
        """Theta + S: the cross-section Gram with F and r^2 both set to 1."""
        return self.theta_form + self.fiber_form

    @property
    def cross_section(self):
        return Lattice(self.coordinate_torus)

    def area_coefficient(self):
        """sqrt(det(Theta + S)); the volume form is this times r^{n-2} dr."""
        return math.sqrt(float(np.linalg.det(self.coordinate_torus)))

    def volume_density(self, r):
        """sqrt(det g) at radius r, assembled from g_rr and the cross-section Gram."""
        return math.sqrt(float(np.linalg.det(self.cross_gram(r))) * float(self.g_rr(r)))

    @property
    def r_plus(self):
        return self.params.r_plus if self.params is not None else 0.0

    def check_radius(self, r):
        if not (self.r_lo <= r <= self.r_hi):
            raise DomainError(f"radius {r} outside the radial domain [{self.r_lo}, {self.r_hi}]")

    def to_dict(self):
        out = {"kind": self.kind, "n": self.n, "radial_domain": [self.r_lo, self.r_hi],
               "coordinate_torus": self.coordinate_torus.tolist()}
        if self.params is not None:
            out.update(m=self.m, r_plus=self.params.r_plus, beta=self.params.beta)
        if self.spec is not None:
            out.update(R=self.spec.R, cutoff=self.spec.cutoff.kind)
        return out


def cusp_metric(n, L, theta_form=None):
    """Hyperbolic cusp r^{-2}dr^2 + r^2 g_T on the torus L (dimension n-1).

    With ``theta_form`` given, the torus Gram is split as Theta + S with
    S = L - Theta, which is how a cusp shares coordinates with a black hole.
    """
    n = _check_dim(n)
    if L.dim != n - 1:
        raise DimensionError(f"cusp torus must have dimension {n - 1}, got {L.dim}")
    g = L.matrix
    theta = np.zeros_like(g) if theta_form is None else np.array(theta_form, dtype=float)
    if theta.shape != g.shape:
        raise DimensionError("theta form has the wrong shape")
    return ProfileMetric("cusp", n, 0.0, math.inf, theta, g - theta)


def black_hole_metric(params, core, twist_offsets=None):
    """Twisted toral black hole V^{-1}dr^2 + V dtheta^2 + r^2 g_core.

    ``core`` is the (n-2)-torus at unit radius.  Generator b_i of the
    completed basis shifts the angle by ``twist_offsets[i-2] * beta``;
    with a twist basis in ``params`` the forms are returned in the
    original lattice basis, otherwise in the basis (sigma, b_2, ...).
    """
    n = params.n
    if core.dim != n - 2:
        raise DimensionError(f"core torus must have dimension {n - 2}, got {core.dim}")
    d = n - 1
    tau = np.zeros(d)
    tau[0] = 1.0
    if twist_offsets is not None:
        if len(twist_offsets) != n - 2:
            raise DimensionError(f"need {n - 2} twist offsets, got {len(twist_offsets)}")
        tau[1:] = np.asarray(twist_offsets, dtype=float)
    theta_b = params.beta**2 * np.outer(tau, tau)
    fiber_b = np.zeros((d, d))
    fiber_b[1:, 1:] = core.matrix
    if params.twist is not None:
        binv = np.linalg.inv(params.twist.array().astype(float))
        theta_b = binv.T @ theta_b @ binv
        fiber_b = binv.T @ fiber_b @ binv
    return ProfileMetric("black_hole", n, params.r_plus, math.inf, theta_b, fiber_b,
                         m=params.m, params=params)


def glue(cusp, bh, spec):
    """Replace V by r^2 - 2m chi(r) r^{3-n} across the annulus [R/2, 2R].

    The cusp must live on the black hole's coordinate torus Theta + S,
    i.e. be the form the black hole takes once V is replaced by r^2.
    Below R/2 and above 2R the profile is taken verbatim from the two
    inputs.
    """
    if cusp.kind != "cusp" or bh.kind != "black_hole":
        raise DomainError("glue expects a cusp and a black hole")
    if cusp.n != bh.n:
        raise DimensionError(f"dimension mismatch: cusp n={cusp.n}, black hole n={bh.n}")
    if not spec.R > 2 * bh.params.r_plus:
        raise DomainError(f"matching radius {spec.R} must exceed 2 r_+ = {2 * bh.params.r_plus}")
    a = cusp.coordinate_torus
    b = bh.coordinate_torus
    gap = float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))
    if gap > SEAM_TOL:
        raise SeamMismatchError(gap, SEAM_TOL)
    # the glued piece uses the black hole's split of the torus
    return ProfileMetric("glued", bh.n, bh.params.r_plus, math.inf, bh.theta_form, bh.fiber_form,
                         m=bh.m, params=bh.params, spec=spec, cusp=cusp, black_hole=bh)


# --------------------------------------------------------------------------
# one filled end


@dataclass(frozen=True, eq=False)
class FilledEnd:
    """Everything built for filling one toral end along sigma."""

    target: Lattice
    sigma: tuple
    length: float
    R: float
    basis: CompletedBasis
    params: BlackHoleParams
    black_hole: ProfileMetric
    cusp: ProfileMetric
    scaled_cusp: ProfileMetric
    glued: ProfileMetric


def filled_end(n, target, sigma, m=0.5, cutoff=None):
    """Match a twisted black hole to the cusp over (T^{n-1}, target) along sigma.

    ``scaled_cusp`` is r^{-2}dr^2 + (r/R)^2 g_0, whose slice at r = R is
    the target torus.  ``cusp`` is the hyperbolic metric on the black
    hole's coordinate torus, which is what the glued metric becomes
    beyond 2R.
    """
    n = _check_dim(n)
    if target.dim != n - 1:
        raise DimensionError(f"target torus must have dimension {n - 1}, got {target.dim}")
    s = as_curve(target, sigma)
    length = curve_length(target, s)
    R = match_radius(n, m, length)
    basis = complete_basis(target, s)
    params = bh_params(n, m, twist=basis)
    cols = basis.columns()
    n2 = target.inner(s.coeffs, s.coeffs)
    offsets = [target.inner(c, s.coeffs) / n2 for c in cols[1:]]
    # Gram of the components of b_i orthogonal to sigma, brought to unit radius
    perp = [[target.inner(ci, cj) - target.inner(ci, s.coeffs) * target.inner(cj, s.coeffs) / n2
             for cj in cols[1:]] for ci in cols[1:]]
    core = Lattice(np.array(perp, dtype=float) / R**2)
    bh = black_hole_metric(params, core, [float(x) for x in offsets])
    cusp = cusp_metric(n, Lattice(bh.coordinate_torus), theta_form=bh.theta_form)
    scaled = cusp_metric(n, Lattice(target.matrix / R**2))
    spec = GlueSpec(R, cutoff or CutoffSpec())
    return FilledEnd(target, s.coeffs, length, R, basis, params, bh, cusp, scaled,
                     glue(cusp, bh, spec))


def unit_area_target(n, R, m=0.5):
    """Unit-covolume torus diag(L^2, L^{-2/(n-2)}, ...) whose first basis
    vector has exactly the length that matches radius R."""
    n = _check_dim(n)
    length = math.sqrt(v_profile(n, m, R)) * theta_period(n, m)
    other = length ** (-2.0 / (n - 2))
    return Lattice(np.diag([length**2] + [other] * (n - 2))), (1,) + (0,) * (n - 2)


def unit_area_end(n, R, m=0.5, cutoff=None):
    """Filled end over ``unit_area_target``; its matching radius is R."""
    target, sigma = unit_area_target(n, R, m)
    return filled_end(n, target, sigma, m=m, cutoff=cutoff)


def rescale_mass(n, m_from, m_to):
    """Radius factor c with V_{m_from}(c s) = c^2 V_{m_to}(s)."""
    n = _check_dim(n)
    _check_mass(m_from)
    _check_mass(m_to)
    return (m_from / m_to) ** (1.0 / (n - 1))

