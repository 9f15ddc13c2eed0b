import math

import numpy as np
import pytest

from dehnfill.curvature import curvature_fd, einstein_residual_frame, frame_curvature
from dehnfill.errors import DimensionError, DomainError, SeamMismatchError
from dehnfill.lattice import Lattice, curve_length, torus_diameter
from dehnfill.metrics import (
    CutoffSpec,
    GlueSpec,
    bh_params,
    black_hole_metric,
    cusp_metric,
    filled_end,
    glue,
    match_radius,
    rescale_mass,
    unit_area_end,
    v_derivatives,
    v_profile,
)
from dehnfill.topo import truncated_volume


@pytest.mark.parametrize("n, m, r, expected", [(4, 0.5, 1.0, 0.0), (3, 0.5, 2.0, 3.0), (6, 0.5, 1.0, 0.0)])
def test_v_profile_examples(n, m, r, expected):
    assert v_profile(n, m, r) == pytest.approx(expected, abs=1e-15)


def test_v_profile_rejects_nonpositive_radius():
    with pytest.raises(DomainError):
        v_profile(4, 0.5, 0.0)
    with pytest.raises(DomainError):
        v_profile(4, 0.5, -1.0)


def test_bh_params_examples():
    p = bh_params(4, 0.5)
    assert p.r_plus == pytest.approx(1.0, abs=1e-15)
    assert p.beta == pytest.approx(4 * math.pi / 3, rel=1e-15)
    p3 = bh_params(3, 0.5)
    assert (p3.r_plus, p3.beta) == pytest.approx((1.0, 2 * math.pi), rel=1e-15)
    assert bh_params(4, 1.0).beta / p.beta == pytest.approx(2 ** (-1 / 3), rel=1e-14)


def test_bh_params_rejects_nonpositive_mass():
    for m in (0.0, -1.0):
        with pytest.raises(DomainError):
            bh_params(4, m)


@pytest.mark.parametrize("n", range(3, 9))
@pytest.mark.parametrize("m", [0.01, 0.5, 3.7])
def test_horizon_identities(n, m):
    p = bh_params(n, m)
    v, dv, _ = v_derivatives(n, m, p.r_plus)
    assert abs(v) < 1e-12 * p.r_plus**2
    assert dv == pytest.approx((n - 1) * p.r_plus, rel=1e-12)
    assert p.beta * dv / 2 == pytest.approx(2 * math.pi, rel=1e-14)


def test_match_radius_examples():
    assert match_radius(3, 0.5, 2 * math.pi) == pytest.approx(math.sqrt(2), rel=1e-12)
    assert match_radius(4, 0.5, 1e-9) == pytest.approx(1.0, abs=1e-12)
    R = match_radius(4, 0.5, 4 * math.pi / 3 * 10)
    # R^3 - 100 R - 1 = 0, largest real root
    oracle = max(np.roots([1, 0, -100, -1]).real)
    assert R == pytest.approx(oracle, rel=1e-12)
    assert R == pytest.approx(10.005, abs=1e-4)
    assert abs(math.sqrt(v_profile(4, 0.5, R)) * 4 * math.pi / 3 - 4 * math.pi / 3 * 10) < 1e-10 * 40


def test_match_radius_monotone_in_length():
    lengths = np.geomspace(0.1, 500, 40)
    radii = [match_radius(5, 0.5, float(x)) for x in lengths]
    assert all(b > a for a, b in zip(radii, radii[1:]))
    L = Lattice(np.eye(2))
    by_sigma = [match_radius(3, 0.5, curve_length(L, (k, 1))) for k in range(1, 20)]
    assert all(b > a for a, b in zip(by_sigma, by_sigma[1:]))


def test_match_radius_rejects_bad_length():
    for bad in (0.0, -1.0, math.inf):
        with pytest.raises(DomainError):
            match_radius(4, 0.5, bad)


# -- cusp ----------------------------------------------------------------------

@pytest.mark.parametrize("n", [3, 4, 5])
def test_cusp_is_hyperbolic(n):
    g = cusp_metric(n, Lattice(np.eye(n - 1)))
    for r in (0.3, 1.0, 7.0):
        assert np.allclose(frame_curvature(g, r).sectional_values(), -1, atol=1e-12)
        assert np.allclose(curvature_fd(g, r).sectional_values(), -1, atol=1e-9)


def test_cusp_exponential_coordinate_roundtrip():
    g = cusp_metric(4, Lattice(np.eye(3)))
    for t in np.linspace(-3, 3, 13):
        r = math.exp(t)
        # dr = e^t dt, so g_rr dr^2 = g_rr e^{2t} dt^2
        assert g.g_rr(r) * r * r == pytest.approx(1.0, abs=1e-12)
        assert g.warp(r) == pytest.approx(math.exp(2 * t), rel=1e-12)
        assert math.log(r) == pytest.approx(t, abs=1e-12)


def test_cusp_volume_below_one():
    L = Lattice([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.5]])
    g = cusp_metric(4, L)
    assert truncated_volume(g, 0.0, 1.0) == pytest.approx(L.area() / 3, rel=1e-10)


def test_cusp_dimension_mismatch():
    with pytest.raises(DimensionError):
        cusp_metric(4, Lattice(np.eye(2)))


# -- black hole ------------------------------------------------------------------

@pytest.mark.parametrize("n, gram, sigma", [
    (3, [[1.0, 0.2], [0.2, 2.0]], (13, 9)),
    (4, np.eye(3), (9, 5, 7)),
    (5, np.diag([1.0, 2.0, 0.5, 1.5]), (4, -3, 2, 1)),
])
def test_black_hole_slice_at_R_is_target(n, gram, sigma):
    target = Lattice(gram)
    end = filled_end(n, target, sigma)
    G = end.black_hole.cross_gram(end.R)
    assert np.max(np.abs(G - target.matrix)) < 1e-10 * np.max(np.abs(target.matrix))
    # sigma collapses at the horizon
    s = np.array(sigma, float)
    assert s @ end.black_hole.cross_gram(end.params.r_plus) @ s < 1e-12
    assert s @ end.black_hole.cross_gram(end.params.r_plus * 1.001) @ s > 0


def test_core_diameter_scales_inversely_with_R():
    target = Lattice(np.eye(3))
    beta = bh_params(4, 0.5).beta
    prods = []
    for R in (10, 20, 40):
        k = round(beta * R)
        end = filled_end(4, target, (k, 1, 0))
        rp = end.params.r_plus
        core = Lattice(_core_gram(end, rp))
        prods.append(torus_diameter(core) * end.R)
    assert max(prods) / min(prods) < 1.05


def _core_gram(end, r):
    # the slice at r in the completed basis; drop the collapsed sigma direction
    B = end.basis.array().astype(float)
    G = B.T @ end.black_hole.cross_gram(r) @ B
    return G[1:, 1:]


def test_black_hole_core_dimension_checked():
    with pytest.raises(DimensionError):
        black_hole_metric(bh_params(4, 0.5), Lattice(np.eye(3)))


def test_mass_rescaling_is_an_isometry_of_profiles():
    for n in (4, 5, 6):
        for m_from, m_to in ((0.5, 2.0), (3.0, 0.1)):
            c = rescale_mass(n, m_from, m_to)
            s = np.linspace(1.5, 20, 25) * bh_params(n, m_to).r_plus
            lhs = np.asarray(v_profile(n, m_from, c * s))
            rhs = c**2 * np.asarray(v_profile(n, m_to, s))
            assert np.max(np.abs(lhs - rhs) / np.abs(rhs)) < 1e-10


# -- glue ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def end16():
    return unit_area_end(4, 16.0)


def test_glued_equals_pieces_outside_annulus(end16):
    g, R = end16.glued, end16.R
    lo = np.linspace(end16.params.r_plus, R / 2, 200)
    hi = np.linspace(2 * R, 10 * R, 200)
    for a, b in zip(g.profile(lo), end16.black_hole.profile(lo)):
        assert np.array_equal(a, b)
    for a, b in zip(g.profile(hi), end16.cusp.profile(hi)):
        assert np.array_equal(a, b)


def test_glued_residual_vanishes_outside_annulus(end16):
    g, R = end16.glued, end16.R
    rs = np.concatenate([np.linspace(1.2, R / 2, 30), np.linspace(2 * R, 6 * R, 30)])
    assert np.max(einstein_residual_frame(g, rs)) < 1e-8
    for r in (3.0, R / 2 * 0.99, 2.01 * R):
        assert curvature_fd(g, r).einstein_residual < 1e-8


def test_glued_residual_in_annulus_shrinks_with_R():
    sups = []
    for R in (8.0, 16.0, 32.0):
        g = unit_area_end(4, R).glued
        vals = einstein_residual_frame(g, np.geomspace(R / 2, 2 * R, 401))
        assert np.all(np.isfinite(vals))
        sups.append(vals.max())
    assert sups[0] > sups[1] > sups[2] > 0


@pytest.mark.parametrize("n", [3, 4, 5])
def test_seam_discrepancy_decay(n):
    Rs = [8.0, 16.0, 32.0, 64.0]
    gaps = []
    for R in Rs:
        end = unit_area_end(n, R)
        rs = np.geomspace(R / 2, 2 * R, 201)
        Fbh = np.asarray(end.black_hole.F(rs))
        Fc = np.asarray(end.cusp.F(rs))
        gaps.append(np.max(np.abs(Fbh - Fc) / Fc))
    slope = np.polyfit(np.log(Rs), np.log(gaps), 1)[0]
    assert abs(slope + (n - 1)) <= 0.3


@pytest.mark.parametrize("kind", ["smooth", "quintic"])
def test_cutoff_shape(kind):
    for R in (8.0, 64.0):
        spec = GlueSpec(R, CutoffSpec(kind))
        rs = np.geomspace(R / 2, 2 * R, 2001)
        chi, dchi, d2chi = spec.chi(rs)
        assert chi[0] == pytest.approx(1.0) and chi[-1] == pytest.approx(0.0, abs=1e-15)
        assert np.all(np.diff(chi) <= 1e-15)
        assert spec.chi(R / 2 * 0.9)[0] == 1.0 and spec.chi(2.1 * R)[0] == 0.0
    # derivative bounds scale like R^-k
    d1 = [np.max(np.abs(GlueSpec(R, CutoffSpec(kind)).chi(np.geomspace(R / 2, 2 * R, 4001))[1])) * R
          for R in (8.0, 64.0)]
    assert d1[0] == pytest.approx(d1[1], rel=1e-6)


def test_smooth_cutoff_is_flat_at_the_edges():
    spec = GlueSpec(16.0)
    for edge in (8.0, 32.0):
        for eps in (1e-2, 1e-3):
            inside = edge * (1 + eps) if edge == 8.0 else edge * (1 - eps)
            _, d1, d2 = spec.chi(inside)
            assert abs(d1) < 1e-6 and abs(d2) < 1e-6


def test_glue_rejects_seam_mismatch():
    bh = black_hole_metric(bh_params(4, 0.5), Lattice(np.eye(2)))
    wrong = cusp_metric(4, Lattice(np.diag([1.0, 2.0, 1.0])))
    with pytest.raises(SeamMismatchError, match="exceeds"):
        glue(wrong, bh, GlueSpec(16.0))


def test_glue_rejects_small_radius():
    end = unit_area_end(4, 16.0)
    with pytest.raises(DomainError):
        glue(end.cusp, end.black_hole, GlueSpec(1.5))


def test_cutoff_kind_validated():
    with pytest.raises(DomainError):
        CutoffSpec("cubic")
