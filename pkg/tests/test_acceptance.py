"""Acceptance suite: ten end-to-end checks with tolerances and time budgets.

Run with ``pytest tests/test_acceptance.py -v -s`` or directly with
``python tests/test_acceptance.py``; either way one PASS/FAIL line is
printed per check.
"""

import math
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from dehnfill.bieberbach import (
    catalog_flat3,
    catalog_tags,
    check_relations,
    deform_action,
    enumerate_admissible,
)
from dehnfill.curvature import (
    curvature_fd,
    residual_decay_slope,
    sectional_closed_form,
    sup_weyl_near_horizon,
    weyl_lp,
)
from dehnfill.lattice import Lattice, complete_basis, deform_flat_structure
from dehnfill.metrics import bh_params, black_hole_metric, cusp_metric, theta_period, unit_area_end
from dehnfill.modes import (
    CLASSES,
    beta_derivative,
    bounded_dimension_numeric,
    closed_form_modes,
    cone_angle,
    integrate_mode,
    relative_error,
)
from dehnfill.topo import (
    exact_volume_ratio,
    gb4_density,
    gb4_density_split,
    hyperbolic_volume_gb,
    volume_defect,
)

DIMS = range(3, 8)


def _bh(n, m=0.5):
    return black_hole_metric(bh_params(n, m), Lattice(np.eye(n - 2)))


def _cusp(n):
    return cusp_metric(n, Lattice(np.eye(n - 1)))


def curvature_table():
    """Finite-difference sectional curvatures equal the closed forms to 1e-6; under 10 s."""
    worst = 0.0
    for n in DIMS:
        g = _bh(n)
        for r in g.params.r_plus * np.geomspace(1.0, 50.0, 20):
            fd = curvature_fd(g, float(r))
            cf = sectional_closed_form(n, 0.5, float(r))
            worst = max(worst, max(abs(fd.sectional[k] - cf.sectional[k]) for k in cf.sectional))
    return worst < 1e-6, f"max |K_fd - K_closed| = {worst:.2e} over 5 x 20 radii", 10.0


def einstein_residual_exact_models():
    """|Ric + (n-1) g| < 1e-6 for cusp and black hole, n = 3..7; under 30 s."""
    worst = 0.0
    for n in DIMS:
        for g in (_bh(n), _cusp(n)):
            lo = g.params.r_plus if g.params else 0.05
            for r in lo * np.geomspace(1.0, 200.0, 20):
                worst = max(worst, curvature_fd(g, float(r)).einstein_residual)
    return worst < 1e-6, f"max residual = {worst:.2e}", 30.0


def residual_decay():
    """Glued residual slope vs R over {8,16,32,64} is -(n-1) +- 0.3 for n = 3,4,5; under 2 min."""
    slopes = {}
    for n in (3, 4, 5):
        fit = residual_decay_slope([unit_area_end(n, R).glued for R in (8.0, 16.0, 32.0, 64.0)])
        slopes[n] = fit.slope
    ok = all(abs(s + (n - 1)) <= 0.3 for n, s in slopes.items())
    return ok, "slopes " + ", ".join(f"n={n}: {s:.3f}" for n, s in slopes.items()), 120.0


def cone_angle_law():
    """cone_angle(n, m, beta(m)) = 2 pi to 1e-10 for 50 random (n, m); d beta/dm < 0; under 1 s."""
    rng = np.random.default_rng(20240611)
    worst, max_deriv = 0.0, -math.inf
    for _ in range(50):
        n = int(rng.integers(3, 11))
        m = float(10 ** rng.uniform(-3, 3))
        worst = max(worst, abs(cone_angle(n, m, theta_period(n, m)) - 2 * math.pi))
        max_deriv = max(max_deriv, beta_derivative(n, m))
    ok = worst < 1e-10 and max_deriv < 0
    return ok, f"max angle error {worst:.1e}, max d beta/dm {max_deriv:.3e}", 1.0


def mode_analysis():
    """Mode integration vs closed forms (rel 1e-6 on [0.1, 10]); bounded dims (1,0,0); n=4 exponents; under 30 s."""
    worst = 0.0
    dims_ok = True
    for n in DIMS:
        for cls in CLASSES:
            for h0, dh0 in ((1.0, 0.0), (0.0, 1.0), (1.0, -2.5)):
                prof = integrate_mode(n, cls, h0, dh0, (0.1, 10.0))
                worst = max(worst, relative_error(n, cls, prof, h0, dh0))
        dims_ok &= [bounded_dimension_numeric(n, c) for c in CLASSES] == [1, 0, 0]
    hi, lo = closed_form_modes(4, "11").exponents
    exp_err = max(abs(hi - (-3 + math.sqrt(33)) / 2), abs(lo - (-3 - math.sqrt(33)) / 2))
    ok = worst < 1e-6 and dims_ok and exp_err < 1e-10
    return ok, f"max rel error {worst:.1e}, dims ok {dims_ok}, exponent error {exp_err:.1e}", 30.0


def gauss_bonnet_n4():
    """Hyperbolic density 3/(4 pi^2) to 1e-10; dual-path density to 1e-8; vol(chi=1) = 4 pi^2/3 to 1e-9."""
    hyp = max(abs(gb4_density(curvature_fd(_cusp(4), r)) - 3 / (4 * math.pi**2)) for r in (0.5, 1.0, 3.0))
    g = _bh(4)
    dual = max(abs(gb4_density(p) - gb4_density_split(p))
               for p in (curvature_fd(g, float(r)) for r in np.geomspace(1.0, 20.0, 12)))
    vol = abs(hyperbolic_volume_gb(4, 1) - 4 * math.pi**2 / 3)
    ok = hyp < 1e-10 and dual < 1e-8 and vol < 1e-9
    return ok, f"density error {hyp:.1e}, dual-path gap {dual:.1e}, volume error {vol:.1e}", None


def weyl_integral():
    """L^2 norm of W: slope vs R is -3 +- 0.4 for n = 4; sup |W| near r_+ stays bounded below."""
    Rs = [8.0, 16.0, 32.0, 64.0]
    ints, sups = [], []
    for R in Rs:
        g = unit_area_end(4, R).glued
        ints.append(weyl_lp(g, 2))
        sups.append(sup_weyl_near_horizon(g))
    slope = float(np.polyfit(np.log(Rs), np.log(ints), 1)[0])
    ok = abs(slope + 3) <= 0.4 and min(sups) > 0.5
    return ok, f"slope {slope:.3f}, min sup|W| near horizon {min(sups):.4f}", None


def volume_defect_check():
    """Exact-model volume ratio 1-(r_+/R)^(n-1) to 1e-9; glued defect positive, decreasing, slope -(n-1) +- 0.1."""
    Rs = [8.0, 16.0, 32.0, 64.0]
    ratio_err, shape_ok, slopes = 0.0, True, {}
    for n in (3, 4, 5):
        for R in Rs:
            end = unit_area_end(n, R)
            ratio_err = max(ratio_err, abs(exact_volume_ratio(end) - (1 - (end.params.r_plus / R) ** (n - 1))))
        d = [row.delta for row in volume_defect(n, Rs)]
        shape_ok &= all(x > 0 for x in d) and all(b < a for a, b in zip(d, d[1:]))
        slopes[n] = float(np.polyfit(np.log(Rs), np.log(d), 1)[0])
    ok = ratio_err < 1e-9 and shape_ok and all(abs(s + (n - 1)) <= 0.1 for n, s in slopes.items())
    detail = f"ratio error {ratio_err:.1e}; slopes " + ", ".join(f"n={n}: {s:.4f}" for n, s in slopes.items())
    return ok, detail, None


def lattice_suite():
    """1000 random primitive sigma, d <= 5: unimodular completion, projection bound, rank drop only at 0; under 10 s."""
    rng = np.random.default_rng(99)
    done = bad = 0
    while done < 1000:
        d = int(rng.integers(2, 6))
        sigma = [int(x) for x in rng.integers(-12, 13, size=d)]
        if math.gcd(*sigma) != 1:
            continue
        a = rng.integers(-2, 3, size=(d, d))
        L = Lattice((a @ a.T + np.eye(d, dtype=int)).tolist())
        B = complete_basis(L, sigma)
        n2 = L.inner(sigma, sigma)
        good = B.det() in (1, -1) and all(abs(L.inner(b, sigma)) < n2 for b in B.columns()[1:])
        zero = deform_flat_structure(L, B, Fraction(0))
        g0 = zero.gram
        # exactly rank d-1: the sigma row vanishes and the rest is definite
        good &= zero.degenerate and all(x == 0 for x in g0[0]) and not Lattice(g0[1:, 1:].tolist()).degenerate
        for lam in (Fraction(1, 3), Fraction(1)):
            good &= not deform_flat_structure(L, B, lam).degenerate
        bad += not good
        done += 1
    return bad == 0, f"{done} curves, {bad} failures", 10.0


def bieberbach_suite():
    """Ten catalog groups validate; admissible families only for A, B, G, H; deformed relations exact; under 30 s."""
    tags = catalog_tags()
    valid = len(tags) == 10 and all(catalog_flat3(t).validate() for t in tags)
    windows = (2.0, 4.0, 8.0)
    counts = {t: [len(enumerate_admissible(catalog_flat3(t), 1.0, w)) for w in windows] for t in tags}
    infinite = {t for t, c in counts.items() if c[0] > 0 and c[0] < c[1] < c[2]}
    stable = all(c[1] == c[2] for t, c in counts.items() if t not in infinite)
    lams = [Fraction(k, 4) for k in range(5)]
    exact = True
    for t in ("A", "B", "G", "H", "I", "J"):
        g = catalog_flat3(t)
        for rep in enumerate_admissible(g, 1.0, 3.0):
            exact &= all(check_relations(deform_action(g, rep.sigma, lam)).exact_zero for lam in lams)
    forced = check_relations(deform_action(catalog_flat3("B"), (1, 1, 0), Fraction(1, 2), force=True))
    ok = valid and infinite == {"A", "B", "G", "H"} and stable and exact and forced.max_residual > 0
    detail = (f"growing families {''.join(sorted(infinite))}, others stable {stable}, "
              f"deformed exact {exact}, forced residual {forced.max_residual:g}")
    return ok, detail, 30.0


CHECKS = [
    ("curvature table", curvature_table),
    ("Einstein residual of exact models", einstein_residual_exact_models),
    ("residual decay of glued metrics", residual_decay),
    ("cone angle and period law", cone_angle_law),
    ("deformation modes", mode_analysis),
    ("Gauss-Bonnet in dimension four", gauss_bonnet_n4),
    ("Weyl L^2 decay", weyl_integral),
    ("volume defect", volume_defect_check),
    ("lattice completion and deformation", lattice_suite),
    ("flat 3-manifold groups", bieberbach_suite),
]


def evaluate(index):
    label, fn = CHECKS[index]
    t0 = time.perf_counter()
    ok, detail, budget = fn()
    elapsed = time.perf_counter() - t0
    in_time = budget is None or elapsed < budget
    passed = bool(ok and in_time)
    limit = f" (budget {budget:g} s)" if budget else ""
    line = f"[{index + 1:2d}/10] {'PASS' if passed else 'FAIL'}  {label}: {detail}; {elapsed:.2f} s{limit}"
    return passed, line


@pytest.mark.parametrize("index", range(len(CHECKS)), ids=[c[0].replace(" ", "_") for c in CHECKS])
def test_acceptance(index, capsys):
    passed, line = evaluate(index)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


if __name__ == "__main__":
    results = [evaluate(i) for i in range(len(CHECKS))]
    for _, line in results:
        print(line)
    sys.exit(0 if all(p for p, _ in results) else 1)
