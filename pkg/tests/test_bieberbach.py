import math
from fractions import Fraction

import numpy as np
import pytest

import dehnfill.bieberbach as bb
from dehnfill.bieberbach import (
    AffineIsometry,
    BieberbachGroup,
    catalog_flat3,
    catalog_tags,
    check_relations,
    deform_action,
    enumerate_admissible,
    first_homology,
    has_fixed_point,
    is_admissible,
    load_groups,
)
from dehnfill.errors import AdmissibilityError, DomainError, NonPrimitiveError, RelationError
from dehnfill.lattice import Lattice, scale_along

H1 = {
    "A": (3, ()), "B": (1, (2, 2)), "C": (1, (3,)), "D": (1, (2,)), "E": (1, ()),
    "F": (0, (4, 4)), "G": (2, (2,)), "H": (2, ()), "I": (1, (2, 2)), "J": (1, (4,)),
}
ORIENTABLE = set("ABCDEF")
HOLONOMY_ORDER = {"A": 1, "B": 2, "C": 3, "D": 4, "E": 6, "F": 4, "G": 2, "H": 2, "I": 4, "J": 4}


def test_catalog_has_ten_types():
    assert catalog_tags() == tuple("ABCDEFGHIJ")
    assert {t for t in catalog_tags() if catalog_flat3(t).orientable} == ORIENTABLE


@pytest.mark.parametrize("tag", list("ABCDEFGHIJ"))
def test_catalog_entry_is_a_valid_bieberbach_group(tag):
    g = catalog_flat3(tag)
    assert g.validate() is g
    chk = check_relations(g)
    assert chk.exact_zero and chk.max_residual == 0.0
    assert first_homology(g) == H1[tag]
    assert len(g.holonomy_cosets()) == HOLONOMY_ORDER[tag]
    for (A, t), word in g.holonomy_cosets().items():
        if word:
            assert not has_fixed_point(A, t)
    for gen in g.generators.values():
        assert gen.linear_part_int() is not None


def test_catalog_labels_and_unknown_tag():
    assert catalog_flat3("g2") is catalog_flat3("B")
    assert catalog_flat3("B4") is catalog_flat3("J")
    with pytest.raises(KeyError):
        catalog_flat3("K")


def test_type_A_and_B_holonomy():
    assert catalog_flat3("A").generators == {}
    (a,) = catalog_flat3("B").generators.values()
    assert not a.is_identity()
    assert (a @ a).A == bb._identity(3)


# -- admissibility -------------------------------------------------------------------

def test_type_B_plane_is_admissible():
    B = catalog_flat3("B")
    for s in ((0, 1, 0), (0, 2, 3), (0, 1, -4)):
        rep = is_admissible(B, s)
        assert rep.verdict and rep.core_free_ok and all(rep.parallel_ok.values())


def test_type_B_mixed_vector_is_not():
    rep = is_admissible(catalog_flat3("B"), (1, 1, 0))
    assert not rep.verdict
    assert rep.parallel_ok == {"a": False}
    assert rep.witness == "a"


def test_type_B_axis_fails_core_freeness_only():
    rep = is_admissible(catalog_flat3("B"), (1, 0, 0))
    assert all(rep.parallel_ok.values())
    assert not rep.core_free_ok and not rep.verdict
    assert rep.witness == "a"


def test_type_A_everything_admissible():
    A = catalog_flat3("A")
    assert all(is_admissible(A, s).verdict for s in ((1, 0, 0), (3, -2, 5), (7, 1, 1)))


def test_non_primitive_sigma_rejected():
    with pytest.raises(NonPrimitiveError):
        is_admissible(catalog_flat3("B"), (0, 2, 2))


@pytest.mark.parametrize("tag", list("BGHIJ"))
def test_parallel_ok_invariant_under_sign_and_conjugation(tag):
    g = catalog_flat3(tag)
    moved = g.conjugated((1, -2, 3))
    moved.validate()
    for rep in [is_admissible(g, c) for c in bb.enumerate_fillings(g.lattice, 1, 3)]:
        s = rep.sigma.coeffs
        neg = is_admissible(g, tuple(-x for x in s))
        conj = is_admissible(moved, s)
        assert neg.parallel_ok == rep.parallel_ok == conj.parallel_ok


# -- enumeration ------------------------------------------------------------------------

def plane_oracle(group, lo, hi, keep):
    out = []
    r = int(hi / math.sqrt(np.linalg.eigvalsh(group.lattice.matrix)[0])) + 1
    for v in np.ndindex(*(2 * r + 1,) * 3):
        v = tuple(x - r for x in v)
        if not any(v) or math.gcd(*v) != 1 or next(x for x in v if x) < 0 or not keep(v):
            continue
        if lo <= math.sqrt(group.lattice.inner(v, v)) <= hi:
            out.append(v)
    return sorted(out)


def test_type_B_window_is_the_plane():
    B = catalog_flat3("B")
    got = [r.sigma.coeffs for r in enumerate_admissible(B, 1, 5)]
    assert got == plane_oracle(B, 1, 5, lambda v: v[0] == 0)
    assert len(got) == 24
    assert len(enumerate_admissible(B, 1, 6)) == 36


def test_type_G_and_H_windows():
    G = catalog_flat3("G")
    got = [r.sigma.coeffs for r in enumerate_admissible(G, 1, 3)]
    # fixed plane <a1, a2> with odd a2 coefficient, plus the reflected axis
    assert got == plane_oracle(G, 1, 3, lambda v: (v[2] == 0 and v[1] % 2) or v == (0, 0, 1))
    assert len(enumerate_admissible(catalog_flat3("H"), 1, 3)) == 4


def test_rotation_types_have_no_admissible_curve():
    for tag in "CDEF":
        assert enumerate_admissible(catalog_flat3(tag), 1, 6) == []


def test_type_A_unit_window():
    got = enumerate_admissible(catalog_flat3("A"), 1, 1)
    assert [r.sigma.coeffs for r in got] == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]


def test_enumeration_order_independent_of_workers():
    B = catalog_flat3("B")
    one = [r.to_dict() for r in enumerate_admissible(B, 1, 6)]
    four = [r.to_dict() for r in enumerate_admissible(B, 1, 6, workers=4)]
    assert one == four


def test_infinite_family_pattern():
    counts = {t: [len(enumerate_admissible(catalog_flat3(t), 1, w)) for w in (3, 6)] for t in catalog_tags()}
    growing = {t for t, (a, b) in counts.items() if b > a > 0}
    assert growing == {"A", "B", "G", "H"}
    assert counts["I"] == counts["J"] == [1, 1]


# -- deformation ---------------------------------------------------------------------------

LAMBDAS = [Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1)]


@pytest.mark.parametrize("tag, sigma", [("B", (0, 2, 1)), ("G", (1, 1, 0)), ("G", (0, 0, 1)),
                                        ("H", (2, 1, 0)), ("A", (1, 2, 3)), ("I", (0, 1, 0))])
def test_deformed_relations_stay_exact(tag, sigma):
    g = catalog_flat3(tag)
    for lam in LAMBDAS:
        chk = check_relations(deform_action(g, sigma, lam))
        assert chk.exact_zero, (lam, chk.worst)


def test_deformation_endpoints():
    G = catalog_flat3("G")
    s = (1, 1, 0)
    one = deform_action(G, s, 1)
    assert one.generators == G.generators and one.translations == G.translations
    assert one.lattice == G.lattice
    zero = deform_action(G, s, 0)
    for v in list(zero.translations) + [x.t for x in zero.generators.values()]:
        assert G.lattice.inner(v, s) == 0


def test_forced_non_admissible_deformation_breaks_relations():
    B = catalog_flat3("B")
    with pytest.raises(AdmissibilityError):
        deform_action(B, (1, 1, 0), Fraction(1, 2))
    chk = check_relations(deform_action(B, (1, 1, 0), Fraction(1, 2), force=True))
    assert not chk.exact_zero
    assert chk.max_residual == pytest.approx(0.5)
    assert chk.worst == "a t1 a^-1 t1^-1"


def test_deformation_rejects_bad_lambda():
    with pytest.raises(DomainError):
        deform_action(catalog_flat3("B"), (0, 1, 0), Fraction(3, 2))


def test_deformation_uses_one_scaling_routine(monkeypatch):
    calls = []

    def spy(vector, sigma, L, lam):
        calls.append(tuple(vector))
        return scale_along(vector, sigma, L, lam)

    monkeypatch.setattr(bb, "scale_along", spy)
    G = catalog_flat3("G")
    s = (1, 1, 0)
    out = deform_action(G, s, Fraction(1, 3))
    expected = list(G.translations) + [g.t for g in G.generators.values()]
    assert sorted(calls) == sorted(tuple(v) for v in expected)
    for v, w in zip(G.translations, out.translations):
        assert w == scale_along(v, s, G.ambient, Fraction(1, 3))
    for k, g in G.generators.items():
        assert out.generators[k].t == scale_along(g.t, s, G.ambient, Fraction(1, 3))


# -- presentations ------------------------------------------------------------------------------

def test_torus_with_unimodular_basis_change():
    U = np.array([[2, 1, 0], [1, 1, 0], [3, -1, 1]])
    gram = (U.T @ U).tolist()
    shift = AffineIsometry.translation((Fraction(1), Fraction(0), Fraction(2)))
    g = BieberbachGroup(Lattice(gram), {"s": shift}, ["s t1^-1 t3^-2"])
    chk = check_relations(g)
    assert chk.exact_zero and chk.max_residual == 0


def test_affine_composition_law():
    a = AffineIsometry([[0, -1], [1, 0]], [Fraction(1, 2), 0])
    b = AffineIsometry([[1, 0], [0, -1]], [0, Fraction(1, 3)])
    v = (Fraction(2, 7), Fraction(-1, 5))
    assert (a @ b).apply(v) == a.apply(b.apply(v))
    assert (a @ a.inverse()).is_identity()
    # (I + R + R^2 + R^3) t = 0 for a quarter turn
    assert a.power(4).is_identity()
    assert not a.power(2).is_identity()
    assert a.power(-2) == a.inverse() @ a.inverse()


USER_GROUPS = {
    "good": {"gram": [[1, 0], [0, 1]], "relations": ["g^2 t1^-1"],
             "generators": [{"name": "g", "A": [[1, 0], [0, -1]], "t": ["1/2", 0]}]},
}


def test_user_group_loads():
    groups = load_groups(USER_GROUPS)
    assert first_homology(groups["good"]) == (1, (2,))


def test_user_group_file(tmp_path):
    path = tmp_path / "klein.toml"
    path.write_text('[k]\ngram = [[1, 0], [0, 1]]\nrelations = ["g^2 t1^-1"]\n'
                    '[[k.generators]]\nname = "g"\nA = [[1, 0], [0, -1]]\nt = ["1/2", 0]\n')
    assert "k" in load_groups(str(path))


@pytest.mark.parametrize("mutate, message", [
    (lambda t: t["generators"][0].update(t=[0, 0]) or t.update(relations=["g^2"]), "fixed point"),
    (lambda t: t.update(relations=["g^2"]), "does not evaluate"),
    (lambda t: t.update(relations=["g^2 q"]), "unknown generator"),
    (lambda t: t.update(relations=["g^0"]), "zero exponent"),
    (lambda t: t.update(relations=["g^2 t5"]), "out of range"),
    (lambda t: t["generators"][0].update(A=[[1, 0], [0, 2]]), "det A"),
    (lambda t: t.update(gram=[[1, 0], [0, 2]]) or t["generators"][0].update(A=[[0, 1], [1, 0]], t=[0, 0]),
     "A\\^T G A"),
    (lambda t: t.update(h1="Z^2"), "first homology"),
])
def test_user_group_validation(mutate, message):
    import copy

    table = copy.deepcopy(USER_GROUPS["good"])
    mutate(table)
    with pytest.raises(RelationError, match=message):
        load_groups({"bad": table})


def test_fixed_point_detector():
    half = Fraction(1, 2)
    assert has_fixed_point(((-1, 0), (0, -1)), (half, 0))
    assert not has_fixed_point(((1, 0), (0, -1)), (half, 0))
    assert has_fixed_point(((1, 0), (0, -1)), (0, half))
    assert not has_fixed_point(((1, 0), (0, 1)), (half, 0))
