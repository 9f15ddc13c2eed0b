"""Curvature of profile metrics, computed two independent ways.

* ``frame_curvature`` uses the closed formulas for a doubly warped product
  over an interval, where the curvature operator is diagonal in the frame
  (radial, angular, torus).
* ``curvature_fd`` differentiates the metric components numerically in an
  explicit chart and assembles Christoffel symbols, Riemann, Ricci and Weyl
  from scratch.  Central differences with one Richardson step.

Tensor conventions: R^a_{bcd} = d_c G^a_{db} - d_d G^a_{cb} + ..., lowered
on the first index, so a coordinate plane (i, j) has sectional curvature
R_{ijij} / (g_ii g_jj - g_ij^2) and the round sphere is positive.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import eigh
from scipy.optimize import minimize_scalar

from .errors import ChartError, DimensionError, DomainError
from .metrics import horizon_radius

DEFAULT_REL_STEP = 1e-3
# the gauge term needs third derivatives; a wider stencil keeps rounding down
PHI_REL_STEP = 3e-3
HORIZON_CHART_BELOW = 1.5


def frame_labels(n):
    return ["r", "theta"] + [f"t{i}" for i in range(1, n - 1)]


@dataclass
class CurvaturePoint:
    """Curvature data at one radius.

    ``sectional`` maps a pair of chart labels to the sectional curvature of
    that coordinate 2-plane.  Norms are pointwise g-norms; ``weyl_norm`` is
    sqrt(W_abcd W^abcd).
    """

    r: float
    n: int
    sectional: dict
    ricci_eigs: tuple | None = None
    scalar: float | None = None
    einstein_residual: float | None = None
    weyl_norm: float | None = None
    ricci_traceless_norm: float | None = None
    chart: str = "closed_form"
    tensors: dict = field(default_factory=dict, repr=False)

    def sectional_values(self):
        return np.array(list(self.sectional.values()))

    def as_row(self):
        row = {"r": self.r, "n": self.n, "chart": self.chart}
        for (a, b), k in self.sectional.items():
            row[f"K_{a}_{b}"] = k
        for key in ("scalar", "einstein_residual", "weyl_norm", "ricci_traceless_norm"):
            row[key] = getattr(self, key)
        return row


# --------------------------------------------------------------------------
# closed forms


def sectional_closed_form(n, m, r):
    """Sectional curvatures of the toral black hole at radius r >= r_+."""
    rp = horizon_radius(n, m)
    if r < rp * (1 - 1e-14):
        raise DomainError(f"radius {r} is inside the horizon r_+ = {rp}")
    q = m / r ** (n - 1)
    k_rth = -1 + (n - 3) * (n - 2) * q
    k_rt = -1 - (n - 3) * q
    k_tt = -1 + 2 * q
    labels = frame_labels(n)
    sec = {}
    for a, b in itertools.combinations(range(n), 2):
        if (a, b) == (0, 1):
            k = k_rth
        elif a <= 1:
            k = k_rt
        else:
            k = k_tt
        sec[(labels[a], labels[b])] = k
    return CurvaturePoint(float(r), n, sec)


def _frame_values(F, dF, d2F, r):
    return -0.5 * d2F, -0.5 * dF / r, -F / r**2


def frame_curvature(g, r):
    """Full curvature data from the warped-product formulas.

    Sectional curvatures in the frame (radial, angular, torus):
    K(r,theta) = -F''/2, K(r,t) = K(theta,t) = -F'/(2r), K(t,t') = -F/r^2.
    """
    n = g.n
    F, dF, d2F = g.profile(r)
    k_rth, k_rt, k_tt = _frame_values(F, dF, d2F, r)
    labels = frame_labels(n)
    kmat = np.zeros((n, n))
    for a, b in itertools.combinations(range(n), 2):
        k = k_rth if (a, b) == (0, 1) else (k_rt if a <= 1 else k_tt)
        kmat[a, b] = kmat[b, a] = k
    rho = kmat.sum(axis=1)
    s = rho.sum()
    resid = math.sqrt(float(np.sum((rho + (n - 1)) ** 2)))
    z = math.sqrt(float(np.sum((rho - s / n) ** 2)))
    w2 = 0.0
    for a, b in itertools.combinations(range(n), 2):
        w = kmat[a, b] - (rho[a] + rho[b]) / (n - 2) + s / ((n - 1) * (n - 2)) if n > 3 else 0.0
        w2 += 4 * w * w
    sec = {(labels[a], labels[b]): float(kmat[a, b]) for a, b in itertools.combinations(range(n), 2)}
    return CurvaturePoint(float(r), n, sec, tuple(map(float, rho)), float(s), resid,
                          math.sqrt(w2), z, chart="frame")


def einstein_residual_frame(g, r):
    """Vectorised |Ric + (n-1) g| over an array of radii (frame formulas)."""
    n = g.n
    r = np.asarray(r, dtype=float)
    F, dF, d2F = g.profile(r)
    k_rth, k_rt, k_tt = _frame_values(np.asarray(F), np.asarray(dF), np.asarray(d2F), r)
    rho_r = k_rth + (n - 2) * k_rt
    rho_t = 2 * k_rt + (n - 3) * k_tt
    return np.sqrt(2 * (rho_r + n - 1) ** 2 + (n - 2) * (rho_t + n - 1) ** 2)


# --------------------------------------------------------------------------
# finite-difference oracle


def _stencil_points(x, steps):
    """Points needed for first, pure second and mixed second differences."""
    n = len(x)
    pts = [x.copy()]
    index = {}
    for i in range(n):
        for sgn in (1, -1):
            p = x.copy()
            p[i] += sgn * steps[i]
            index[(i, sgn)] = len(pts)
            pts.append(p)
    for i, j in itertools.combinations(range(n), 2):
        for si in (1, -1):
            for sj in (1, -1):
                p = x.copy()
                p[i] += si * steps[i]
                p[j] += sj * steps[j]
                index[(i, si, j, sj)] = len(pts)
                pts.append(p)
    return np.array(pts), index


def _raw_derivatives(metric_fn, x, steps):
    pts, idx = _stencil_points(x, steps)
    vals = np.asarray(metric_fn(pts), dtype=float)
    n = len(x)
    g0 = vals[0]
    dg = np.zeros((n,) + g0.shape)
    ddg = np.zeros((n, n) + g0.shape)
    for i in range(n):
        fp, fm = vals[idx[(i, 1)]], vals[idx[(i, -1)]]
        dg[i] = (fp - fm) / (2 * steps[i])
        ddg[i, i] = (fp - 2 * g0 + fm) / steps[i] ** 2
    for i, j in itertools.combinations(range(n), 2):
        v = (vals[idx[(i, 1, j, 1)]] - vals[idx[(i, 1, j, -1)]]
             - vals[idx[(i, -1, j, 1)]] + vals[idx[(i, -1, j, -1)]]) / (4 * steps[i] * steps[j])
        ddg[i, j] = ddg[j, i] = v
    return g0, dg, ddg


def metric_derivatives(metric_fn, x, steps, richardson=True):
    """(g, dg, ddg) at x; dg[e] = d_e g, ddg[e, f] = d_e d_f g.

    ``metric_fn`` maps an (N, n) array of points to (N, n, n) metrics.
    With ``richardson`` the h and h/2 results are combined to cancel the
    h^2 error term.
    """
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    g, dg, ddg = _raw_derivatives(metric_fn, x, steps)
    if richardson:
        _, dg2, ddg2 = _raw_derivatives(metric_fn, x, steps / 2)
        dg = (4 * dg2 - dg) / 3
        ddg = (4 * ddg2 - ddg) / 3
    return g, dg, ddg


def christoffel(g, dg):
    """Gamma^a_{bc} from g and dg[e, a, b] = d_e g_ab."""
    ginv = np.linalg.inv(g)
    # lowered: G_{d bc} = 1/2 (d_b g_dc + d_c g_db - d_d g_bc)
    low = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg)
    return np.einsum("ad,dbc->abc", ginv, low)


def connection(g, dg, ddg):
    """Gamma^a_{bc} and its derivatives dGamma[e, a, b, c] = d_e Gamma^a_{bc}."""
    ginv = np.linalg.inv(g)
    low = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cdb->dbc", dg) - dg)
    dlow = 0.5 * (np.einsum("ebdc->edbc", ddg) + np.einsum("ecdb->edbc", ddg) - ddg)
    dginv = -np.einsum("ap,epq,qd->ead", ginv, dg, ginv)
    gam = np.einsum("ad,dbc->abc", ginv, low)
    dgam = np.einsum("ead,dbc->eabc", dginv, low) + np.einsum("ad,edbc->eabc", ginv, dlow)
    return gam, dgam


def riemann(g, dg, ddg):
    """Fully lowered Riemann tensor R_abcd and the Christoffel symbols."""
    gam, dgam = connection(g, dg, ddg)
    # R^a_bcd = d_c Gam^a_db - d_d Gam^a_cb + Gam^a_ce Gam^e_db - Gam^a_de Gam^e_cb
    rup = (np.einsum("cadb->abcd", dgam) - np.einsum("dacb->abcd", dgam)
           + np.einsum("ace,edb->abcd", gam, gam) - np.einsum("ade,ecb->abcd", gam, gam))
    rlow = np.einsum("ae,ebcd->abcd", g, rup)
    return rlow, gam


def symmetrize_curvature(rm):
    """Project onto tensors with the algebraic symmetries of a curvature tensor."""
    rm = 0.5 * (rm - np.einsum("bacd->abcd", rm))
    rm = 0.5 * (rm - np.einsum("abdc->abcd", rm))
    rm = 0.5 * (rm + np.einsum("cdab->abcd", rm))
    cyc = (rm + np.einsum("acdb->abcd", rm) + np.einsum("adbc->abcd", rm)) / 3.0
    return rm - cyc


def kulkarni_nomizu(h, k):
    return (np.einsum("ac,bd->abcd", h, k) + np.einsum("bd,ac->abcd", h, k)
            - np.einsum("ad,bc->abcd", h, k) - np.einsum("bc,ad->abcd", h, k))


def _norm2(ginv, t):
    """g-norm squared of a covariant tensor of any rank."""
    out = t
    for axis in range(t.ndim):
        out = np.moveaxis(np.tensordot(ginv, out, axes=([1], [axis])), 0, axis)
    return float(np.sum(out * t))


def point_from_riemann(g, rm, r, labels, chart):
    """Assemble sectional, Ricci, scalar, residual and Weyl data."""
    n = g.shape[0]
    ginv = np.linalg.inv(g)
    rm = symmetrize_curvature(rm)
    ric = np.einsum("ac,abcd->bd", ginv, rm)
    ric = 0.5 * (ric + ric.T)
    s = float(np.einsum("bd,bd->", ginv, ric))
    eigs = eigh(ric, g, eigvals_only=True)
    resid = ric + (n - 1) * g
    z = ric - (s / n) * g
    weyl = rm - kulkarni_nomizu(z, g) / (n - 2) - s / (2 * n * (n - 1)) * kulkarni_nomizu(g, g)
    sec = {}
    for i, j in itertools.combinations(range(n), 2):
        sec[(labels[i], labels[j])] = float(rm[i, j, i, j] / (g[i, i] * g[j, j] - g[i, j] ** 2))
    return CurvaturePoint(float(r), n, sec, tuple(map(float, eigs)), s,
                          math.sqrt(max(_norm2(ginv, resid), 0.0)),
                          math.sqrt(max(_norm2(ginv, weyl), 0.0)),
                          math.sqrt(max(_norm2(ginv, z), 0.0)), chart=chart,
                          tensors={"g": g, "riemann": rm, "ricci": ric, "weyl": weyl})


# --------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class Chart:
    """A coordinate chart: metric function, base point, steps, labels, validity."""

    name: str
    metric_fn: object
    point: np.ndarray
    steps: np.ndarray
    labels: list


def adapted_chart(g, r, rel_step=DEFAULT_REL_STEP):
    """Coordinates (r, theta, t_i) with metric diag(1/F, F, r^2, ..., r^2)."""
    n = g.n
    h = rel_step * r
    if r - h <= g.r_lo or r + h >= g.r_hi:
        raise ChartError(f"stencil [{r - h}, {r + h}] leaves the radial domain ({g.r_lo}, {g.r_hi}); "
                         "use the horizon chart near r_+")

    def metric_fn(x):
        rr = x[:, 0]
        F = np.asarray(g.F(rr))
        out = np.zeros((len(rr), n, n))
        out[:, 0, 0] = 1.0 / F
        out[:, 1, 1] = F
        for i in range(2, n):
            out[:, i, i] = rr**2
        return out

    pt = np.zeros(n)
    pt[0] = r
    return Chart("adapted", metric_fn, pt, np.full(n, h), frame_labels(n))


def lattice_chart(g, r, rel_step=DEFAULT_REL_STEP):
    """Coordinates (r, x_1, ..., x_{n-1}) along the lattice basis of the torus."""
    n = g.n
    h = rel_step * r
    if r - h <= g.r_lo:
        raise ChartError(f"stencil leaves the radial domain at r = {r}; use the horizon chart")
    theta, fiber = g.theta_form, g.fiber_form

    def metric_fn(x):
        rr = x[:, 0]
        F = np.asarray(g.F(rr))
        out = np.zeros((len(rr), n, n))
        out[:, 0, 0] = 1.0 / F
        out[:, 1:, 1:] = F[:, None, None] * theta + (rr**2)[:, None, None] * fiber
        return out

    pt = np.zeros(n)
    pt[0] = r
    return Chart("lattice", metric_fn, pt, np.full(n, h), ["r"] + [f"x{i}" for i in range(1, n)])


def _divided_power(r, rp, p):
    """(r^p - rp^p) / (r - rp), evaluated without cancellation."""
    if p == 0:
        return np.zeros_like(r)
    if p > 0:
        return sum(r**i * rp ** (p - 1 - i) for i in range(p))
    q = -p
    return -_divided_power(r, rp, q) / (r**q * rp**q)


def horizon_terms(n, rp, r):
    """W = V/(r - r_+) and D = (W - V'(r_+))/(r - r_+) for 2m = r_+^{n-1}."""
    r = np.asarray(r, dtype=float)
    w = sum(rp ** (n - 2 - j) * r ** (j - (n - 3)) for j in range(n - 1))
    d = sum(rp ** (n - 2 - j) * _divided_power(r, rp, j - (n - 3)) for j in range(n - 1))
    return w, d


def horizon_chart(g, r, step=DEFAULT_REL_STEP):
    """Smooth polar chart around the horizon.

    r = r_+ + k (x^2 + y^2) with k = V'(r_+)/4 and angle 2 pi theta / beta.
    The metric is dx^2 + dy^2 + a (x dx + y dy)^2 + b (x dy - y dx)^2 plus
    r^2 on the torus, with a, b smooth across x = y = 0.
    """
    if g.params is None:
        raise ChartError("the horizon chart needs a black hole or glued metric")
    n = g.n
    rp = g.params.r_plus
    if abs(2 * g.m - rp ** (n - 1)) > 1e-12 * rp ** (n - 1):
        raise ChartError("mass and horizon radius are inconsistent")
    dv_plus = (n - 1) * rp
    k = dv_plus / 4
    if r < rp:
        raise DomainError(f"radius {r} is inside the horizon")
    u0 = math.sqrt((r - rp) / k)
    h = step
    limit = g.spec.R / 2 if g.kind == "glued" else math.inf
    if rp + k * (u0 + h) ** 2 >= limit:
        raise ChartError(f"horizon chart stencil reaches r >= {limit}, where the profile is no longer V")

    def metric_fn(x):
        xx, yy = x[:, 0], x[:, 1]
        rr = rp + k * (xx**2 + yy**2)
        w, d = horizon_terms(n, rp, rr)
        a = -k * d / w
        b = k * d / dv_plus
        out = np.zeros((len(xx), n, n))
        out[:, 0, 0] = 1 + a * xx**2 + b * yy**2
        out[:, 1, 1] = 1 + a * yy**2 + b * xx**2
        out[:, 0, 1] = out[:, 1, 0] = (a - b) * xx * yy
        for i in range(2, n):
            out[:, i, i] = rr**2
        return out

    pt = np.zeros(n)
    pt[0] = u0
    return Chart("horizon", metric_fn, pt, np.full(n, h), frame_labels(n))


def choose_chart(g, r, chart="auto", rel_step=DEFAULT_REL_STEP):
    if chart == "auto":
        use_horizon = g.params is not None and r < HORIZON_CHART_BELOW * g.params.r_plus
        chart = "horizon" if use_horizon else "adapted"
    if chart == "adapted":
        return adapted_chart(g, r, rel_step)
    if chart == "lattice":
        return lattice_chart(g, r, rel_step)
    if chart == "horizon":
        return horizon_chart(g, r, rel_step)
    raise ChartError(f"unknown chart {chart!r}")


def curvature_fd(g, r, h=None, chart="auto", richardson=True):
    """Curvature at radius r from finite differences of the metric.

    ``h`` is the relative step (default 1e-3); near the horizon the smooth
    polar chart is used automatically.
    """
    g.check_radius(r)
    if g.params is not None and r < g.params.r_plus * (1 - 1e-14):
        raise DomainError(f"radius {r} is inside the horizon")
    ch = choose_chart(g, r, chart, DEFAULT_REL_STEP if h is None else h)
    return curvature_in_chart(ch, r, richardson)


def curvature_in_chart(ch, r, richardson=True):
    gm, dg, ddg = metric_derivatives(ch.metric_fn, ch.point, ch.steps, richardson)
    rm, _ = riemann(gm, dg, ddg)
    return point_from_riemann(gm, rm, r, ch.labels, ch.name)


def curvature_of(metric_fn, x, steps, labels=None, r=float("nan"), richardson=True):
    """Curvature of an arbitrary metric function at a chart point."""
    x = np.asarray(x, dtype=float)
    labels = labels or [f"x{i}" for i in range(len(x))]
    gm, dg, ddg = metric_derivatives(metric_fn, x, steps, richardson)
    rm, _ = riemann(gm, dg, ddg)
    return point_from_riemann(gm, rm, r, labels, "custom")


# --------------------------------------------------------------------------
# claims


@dataclass(frozen=True)
class DecayFit:
    R: tuple
    values: tuple
    slope: float
    intercept: float


def loglog_fit(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or np.any(ys <= 0):
        raise DomainError("log-log fit needs at least two positive values")
    slope, intercept = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope), float(intercept)


def annulus_sup_residual(g, samples=801, method="frame"):
    """Supremum of |Ric + (n-1)g| over the transition annulus [R/2, 2R]."""
    if g.kind != "glued":
        raise DomainError("annulus residual needs a glued metric")
    R = g.spec.R
    rs = np.geomspace(R / 2, 2 * R, samples)
    if method == "fd":
        vals = np.array([curvature_fd(g, r).einstein_residual for r in rs])
        return float(vals.max())
    vals = einstein_residual_frame(g, rs)
    i = int(np.argmax(vals))
    lo, hi = rs[max(i - 1, 0)], rs[min(i + 1, samples - 1)]
    best = minimize_scalar(lambda r: -float(einstein_residual_frame(g, r)), bounds=(lo, hi),
                           method="bounded", options={"xatol": 1e-10 * R})
    return float(max(vals[i], -best.fun))


def residual_decay_slope(family, method="frame", samples=801):
    """Least-squares slope of log(sup annulus residual) against log R.

    ``family`` is a sequence of glued metrics, one per matching radius.
    """
    family = list(family)
    if len(family) < 3:
        raise DomainError(f"need at least 3 matching radii for a decay fit, got {len(family)}")
    for g in family:
        if g.spec.R <= 4 * g.params.r_plus:
            raise DomainError(f"matching radius {g.spec.R} must exceed 4 r_+")
    Rs = tuple(g.spec.R for g in family)
    sups = tuple(annulus_sup_residual(g, samples, method) for g in family)
    slope, intercept = loglog_fit(Rs, sups)
    return DecayFit(Rs, sups, slope, intercept)


def sectional_bounds_claim(n):
    """Leading-order sectional curvature window (lower, upper) for dimension n."""
    return -1 - (n - 3) / 2, -1 + (n - 3) * (n - 2) / 2


@dataclass(frozen=True)
class CurvatureBounds:
    kmin: float
    kmax: float
    lower: float
    upper: float
    excess: float
    eps: float

    @property
    def ok(self):
        return self.excess <= self.eps


def curvature_bounds(g, grid, eps=1e-9):
    """Extremes of sectional curvature over radii ``grid``.

    The curvature operator is diagonal in the warped frame, so the frame
    values bracket every 2-plane.
    """
    if g.kind not in ("glued", "black_hole"):
        raise DomainError("curvature bounds apply to black hole or glued metrics")
    vals = np.concatenate([frame_curvature(g, float(r)).sectional_values() for r in grid])
    lower, upper = sectional_bounds_claim(g.n)
    kmin, kmax = float(vals.min()), float(vals.max())
    excess = max(0.0, kmax - upper, lower - kmin)
    return CurvatureBounds(kmin, kmax, lower, upper, excess, eps)


def weyl_norm_frame(g, r):
    return frame_curvature(g, r).weyl_norm


def weyl_lp(g, p, r_lo=None, r_hi=None):
    """Integral of |W|^p over the radial range, with the torus factor in closed form."""
    if not p >= 1:
        raise DomainError(f"exponent p must be >= 1, got {p}")
    lo = g.r_lo if r_lo is None else r_lo
    if r_hi is None:
        if g.kind != "glued":
            raise DomainError("an upper radius is required unless the metric is glued")
        r_hi = 2 * g.spec.R
    if not math.isfinite(r_hi):
        raise DomainError("the integral must be truncated at a finite radius")
    if lo < g.r_lo or r_hi <= lo:
        raise DomainError(f"invalid radial range [{lo}, {r_hi}]")
    area = g.area_coefficient()

    def integrand(r):
        return weyl_norm_frame(g, r) ** p * r ** (g.n - 2)

    breaks = [lo]
    if g.kind == "glued":
        breaks += [x for x in (g.spec.R / 2, 2 * g.spec.R) if lo < x < r_hi]
    breaks.append(r_hi)
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        val, _ = quad(integrand, a, b, epsabs=0.0, epsrel=1e-11, limit=200)
        total += val
    return area * total


def sup_weyl_near_horizon(g, width=0.1, samples=41):
    """max |W| over [r_+, r_+ (1 + width)]."""
    rp = g.params.r_plus
    return max(weyl_norm_frame(g, r) for r in np.linspace(rp, rp * (1 + width), samples))


# --------------------------------------------------------------------------
# gauge-fixed Einstein operator


def _gauge_one_form(metric_fn, ref_fn, y, steps):
    """delta_ref g + 1/2 d tr_ref g at the chart point y (one-form)."""
    g, dg, _ = metric_derivatives(metric_fn, y, steps)
    gb, dgb, _ = metric_derivatives(ref_fn, y, steps)
    gbinv = np.linalg.inv(gb)
    gamb = christoffel(gb, dgb)
    # covariant derivative of g w.r.t. the reference connection: nab[a, c, b]
    nab = dg - np.einsum("eac,eb->acb", gamb, g) - np.einsum("eab,ce->acb", gamb, g)
    div = -np.einsum("ac,acb->b", gbinv, nab)
    dtr = np.einsum("ac,eac->e", gbinv, dg) - np.einsum("ap,epq,qc,ac->e", gbinv, dgb, gbinv, g)
    return div + 0.5 * dtr


@dataclass
class PhiResult:
    tensor: np.ndarray
    gauge: np.ndarray
    ricci_part: np.ndarray
    g: np.ndarray

    def _norm(self, t):
        return math.sqrt(max(_norm2(np.linalg.inv(self.g), t), 0.0))

    @property
    def norm(self):
        return self._norm(self.tensor)

    @property
    def gauge_norm(self):
        return self._norm(self.gauge)

    @property
    def residual_norm(self):
        return self._norm(self.ricci_part)


def phi_fd(metric_fn, ref_fn, x, steps):
    """Ric_g + (n-1) g + delta_g^*(delta_ref g + 1/2 d tr_ref g) at x."""
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape).copy()
    n = len(x)
    g, dg, ddg = metric_derivatives(metric_fn, x, steps)
    rm, gam = riemann(g, dg, ddg)
    ginv = np.linalg.inv(g)
    ric = np.einsum("ac,abcd->bd", ginv, rm)
    ric = 0.5 * (ric + ric.T)
    einstein = ric + (n - 1) * g
    # outer differences of the one-form, inner ones use a smaller step
    inner = steps * 0.25
    omega0 = _gauge_one_form(metric_fn, ref_fn, x, inner)

    def omega_at(shift, idx):
        y = x.copy()
        y[idx] += shift
        return _gauge_one_form(metric_fn, ref_fn, y, inner)

    domega = np.zeros((n, n))
    for i in range(n):
        if steps[i] == 0:
            continue
        h = steps[i]
        d1 = (omega_at(h, i) - omega_at(-h, i)) / (2 * h)
        d2 = (omega_at(h / 2, i) - omega_at(-h / 2, i)) / h
        domega[i] = (4 * d2 - d1) / 3
    gauge = 0.5 * (domega + domega.T) - np.einsum("eab,e->ab", gam, omega0)
    return PhiResult(einstein + gauge, gauge, einstein, g)


def phi_directional(metric_fn, h_fn, x, steps, eps=1e-5, central=True):
    """Directional derivative of g -> Phi(g) (reference fixed at g) along h.

    The one-sided quotient carries an O(eps) quadratic term; the central
    one cancels it.
    """
    def shifted(s):
        return lambda p: metric_fn(p) + s * h_fn(p)

    plus = phi_fd(shifted(eps), metric_fn, x, steps).tensor
    if central:
        minus = phi_fd(shifted(-eps), metric_fn, x, steps).tensor
        return (plus - minus) / (2 * eps)
    return (plus - phi_fd(metric_fn, metric_fn, x, steps).tensor) / eps


def phi_operator(g, gbar, r, rel_step=PHI_REL_STEP):
    """Gauge-fixed Einstein operator of ``g`` relative to ``gbar`` at radius r.

    Both metrics are evaluated in one chart, so they must share dimension
    and cross-section.  Near a shared horizon that chart is the smooth
    polar one.
    """
    if g.n != gbar.n:
        raise DimensionError(f"chart mismatch: n={g.n} vs n={gbar.n}")
    if not np.allclose(g.coordinate_torus, gbar.coordinate_torus, rtol=1e-10, atol=1e-12):
        raise DimensionError("chart mismatch: the two metrics live on different cross-section tori")
    chart = "adapted"
    if g.params is not None and gbar.params is not None and g.params.r_plus == gbar.params.r_plus:
        chart = "auto"
    ch = choose_chart(g, r, chart, rel_step)
    ref = choose_chart(gbar, r, ch.name, rel_step)
    return phi_fd(ch.metric_fn, ref.metric_fn, ch.point, ch.steps)


def trace_identity_gap(h, n):
    """|tr R(h) - <Ric, h>| on a curvature -1 background in an orthonormal frame,
    with R(h) = h - (tr h) g and Ric = -(n-1) g."""
    h = np.asarray(h, dtype=float)
    if h.shape != (n, n):
        raise DimensionError(f"expected a {n}x{n} form")
    g = np.eye(n)
    rh = h - np.trace(h) * g
    ric = -(n - 1) * g
    return abs(np.trace(rh) - float(np.sum(ric * h)))


def curvature_action(rm, ginv, h):
    """R(h)_ab = R_acbd h^{cd} for a lowered Riemann tensor."""
    hup = ginv @ h @ ginv
    return np.einsum("acbd,cd->ab", rm, hup)

