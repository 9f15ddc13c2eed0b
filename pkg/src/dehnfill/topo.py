"""Volume bookkeeping for filled ends and four-dimensional Gauss-Bonnet.

Every profile metric F^{-1}dr^2 + F Theta + r^2 S has volume form
A_c r^{n-2} dr dtheta..., independent of F, so the volume lost by filling
an end comes from the part of the cusp below the horizon radius.  The
quadrature routines do not assume this; the closed forms serve as
oracles in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .curvature import frame_curvature
from .errors import DomainError
from .metrics import unit_area_end

QUAD_RTOL = 1e-12


def hyperbolic_volume_gb(n, chi):
    """Volume of a complete finite-volume hyperbolic n-manifold with Euler characteristic chi.

    vol = (-4 pi)^k k! / (2k)! * chi with n = 2k.  The sign of chi must be
    (-1)^k.
    """
    if n < 2 or n % 2:
        raise DomainError(f"dimension must be even and >= 2, got {n}")
    k = n // 2
    if chi * (-1) ** k <= 0:
        raise DomainError(f"Euler characteristic {chi} has the wrong sign for a hyperbolic "
                          f"{n}-manifold: chi * (-1)^{k} must be positive")
    return (-4 * math.pi) ** k * math.factorial(k) / math.factorial(2 * k) * chi


def _require_4d(point):
    if point.n != 4:
        raise DomainError(f"the Gauss-Bonnet integrand is only implemented for n = 4, got n = {point.n}")


def gb4_density(point):
    """Euler-form density (|W|^2 - |z|^2/2 + s^2/24) / (8 pi^2).

    |W|^2 here is the norm of W as an operator on 2-forms, one quarter of
    the tensor norm stored on the point.
    """
    _require_4d(point)
    w2 = point.weyl_norm**2 / 4
    z2 = point.ricci_traceless_norm**2
    s = point.scalar
    return (w2 - 0.5 * z2 + s * s / 24) / (8 * math.pi**2)


def gb4_density_split(point):
    """The same density for an Einstein point, built from sectional curvatures.

    With z = 0 and a diagonal curvature operator, W on the plane (a, b)
    is K(a, b) - s/12.
    """
    _require_4d(point)
    s = point.scalar
    w2 = sum((k - s / 12) ** 2 for k in point.sectional.values())
    return (w2 + s * s / 24) / (8 * math.pi**2)


def gb4_integral(g, r_lo, r_hi):
    """Integral of the Euler density over r_lo < r < r_hi (whole torus factor)."""
    if g.n != 4:
        raise DomainError(f"the Gauss-Bonnet integrand is only implemented for n = 4, got n = {g.n}")
    _check_range(g, r_lo, r_hi)

    def f(r):
        return gb4_density(frame_curvature(g, r)) * g.volume_density(r)

    return _quad_pieces(f, _breakpoints(g, r_lo, r_hi))


def _check_range(g, r_lo, r_hi):
    if not (math.isfinite(r_lo) and math.isfinite(r_hi)) or r_hi <= r_lo:
        raise DomainError(f"invalid radial range [{r_lo}, {r_hi}]")
    if r_lo < g.r_lo or r_hi > g.r_hi:
        raise DomainError(f"[{r_lo}, {r_hi}] is not inside the radial domain [{g.r_lo}, {g.r_hi}]")


def _breakpoints(g, r_lo, r_hi):
    pts = [r_lo]
    if g.kind == "glued":
        pts += [x for x in (g.spec.R / 2, 2 * g.spec.R) if r_lo < x < r_hi]
    pts.append(r_hi)
    return pts


def _quad_pieces(f, pts, epsabs=0.0):
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = quad(f, a, b, epsabs=epsabs, epsrel=QUAD_RTOL, limit=200)
        total += val
    return total


def truncated_volume(g, r_lo, r_hi):
    """Volume of {r_lo < r < r_hi} by adaptive quadrature of sqrt(det g)."""
    _check_range(g, r_lo, r_hi)
    return _quad_pieces(g.volume_density, _breakpoints(g, r_lo, r_hi))


def truncated_volume_closed(g, r_lo, r_hi):
    """A_c (r_hi^{n-1} - r_lo^{n-1}) / (n-1); exact for every profile in the family."""
    _check_range(g, r_lo, r_hi)
    k = g.n - 1
    return g.area_coefficient() * (r_hi**k - r_lo**k) / k


def boundary_area(g, r):
    """Area of the cross-section torus at radius r."""
    return math.sqrt(float(np.linalg.det(g.cross_gram(r))))


def exact_volume_ratio(end):
    """vol(black hole, r_+ < r < R) / vol(cusp, 0 < r < R) for a filled end."""
    R = end.R
    return truncated_volume(end.black_hole, end.params.r_plus, R) / truncated_volume(end.cusp, 0.0, R)


def filling_defect(end, height=None):
    """Volume removed by filling, per unit area of the cusp slice at the matching radius.

    Compares the cusp on the black hole's coordinate torus, 0 < r < height,
    with the glued end, r_+ < r < height.  The part above r_+ is integrated
    as a difference of densities so the small result is not lost to
    cancellation.
    """
    R = end.R
    height = 2 * R if height is None else height
    if height < R:
        raise DomainError(f"height {height} lies below the matching radius {R}")
    cusp, glued = end.cusp, end.glued
    rp = end.params.r_plus
    below = truncated_volume(cusp, 0.0, rp)
    # the two densities agree to rounding, so tolerate rounding of the full volume
    noise = 1e-13 * truncated_volume_closed(cusp, 0.0, height)
    above = _quad_pieces(lambda r: cusp.volume_density(r) - glued.volume_density(r),
                         _breakpoints(glued, rp, height), epsabs=noise)
    return (below + above) / boundary_area(cusp, R)


def filling_defect_closed(n, R, r_plus):
    """(r_+/R)^{n-1} / (n-1): the per-area defect of the exact black hole."""
    return (r_plus / R) ** (n - 1) / (n - 1)


@dataclass(frozen=True)
class DefectRow:
    n: int
    R: float
    delta: float
    slope_estimate: float

    def as_row(self):
        return {"n": self.n, "R": self.R, "delta": self.delta, "slope_estimate": self.slope_estimate}


def volume_defect(n, radii, m=0.5, cutoff=None):
    """Per-area defect of unit-area glued ends over a sweep of matching radii.

    ``slope_estimate`` is the log-log slope to the neighbouring radius
    (the next one for the first row, the previous one otherwise).
    """
    radii = sorted(float(R) for R in radii)
    if len(radii) < 2:
        raise DomainError("a defect table needs at least two matching radii")
    deltas = [filling_defect(unit_area_end(n, R, m, cutoff)) for R in radii]
    rows = []
    for i, (R, d) in enumerate(zip(radii, deltas)):
        j = i + 1 if i == 0 else i - 1
        slope = (math.log(deltas[j]) - math.log(d)) / (math.log(radii[j]) - math.log(R))
        rows.append(DefectRow(n, R, d, slope))
    return rows


def two_pi_check(length):
    """True when a filling curve is long enough for the 2 pi theorem."""
    if not length > 0:
        raise DomainError(f"curve length must be positive, got {length}")
    return length >= 2 * math.pi


def euler_filled(chi_cusped):
    """Euler characteristic after filling every end: unchanged."""
    if int(chi_cusped) != chi_cusped:
        raise DomainError(f"Euler characteristic must be an integer, got {chi_cusped}")
    return int(chi_cusped)


@dataclass
class VolumeReport:
    """Volume pieces of one glued end and what they imply."""

    pieces: dict
    total: float
    defect: float
    euler: dict = field(default_factory=dict)
    gb_density: list = field(default_factory=list)

    def to_dict(self):
        return {"pieces": dict(self.pieces), "total": self.total, "defect": self.defect,
                "euler": dict(self.euler), "gb_density": list(self.gb_density)}


def volume_report(end, height=None, chi=None, samples=5):
    """Split the glued end at R/2 and 2R and integrate each piece.

    For n = 4 the Euler density is sampled at ``samples`` radii across
    the black-hole region.
    """
    g = end.glued
    R = end.R
    height = 4 * R if height is None else height
    rp = end.params.r_plus
    pieces = {
        "black_hole": truncated_volume(g, rp, R / 2),
        "annulus": truncated_volume(g, R / 2, 2 * R),
        "cusp": truncated_volume(g, 2 * R, height),
    }
    total = sum(pieces.values())
    defect = filling_defect(end, height) * boundary_area(end.cusp, R)
    euler = {}
    if chi is not None:
        euler = {"chi_cusped": int(chi), "chi_filled": euler_filled(chi), "signature": 0}
    dens = []
    if g.n == 4:
        for r in np.geomspace(rp, R / 2, samples):
            dens.append({"r": float(r), "density": gb4_density(frame_curvature(g, float(r)))})
    return VolumeReport(pieces, total, defect, euler, dens)
