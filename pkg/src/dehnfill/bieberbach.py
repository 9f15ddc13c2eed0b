"""Flat-manifold ends T^d / Gamma and the filling curves they admit.

Group elements are affine maps v -> A v + t written in lattice
coordinates.  All group arithmetic is done with Fractions so that a
relation residual is either exactly zero or visibly not.

Data files use TOML; see ``data/flat3.toml`` for the format.  The
built-in catalog of the ten compact flat 3-manifolds is loaded from there
and every entry is re-validated on load.
"""

from __future__ import annotations

import math
import re
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from numbers import Rational

import numpy as np
from sympy import Matrix, ZZ
from sympy.matrices.normalforms import smith_normal_decomp

from .errors import AdmissibilityError, DimensionError, RelationError
from .lattice import (
    FillingCurve,
    Lattice,
    as_curve,
    check_lambda,
    complete_basis,
    enumerate_fillings,
    scale_along,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MAX_HOLONOMY = 1024
_TOKEN = re.compile(r"^(?:t(\d+)|([A-Za-z_][A-Za-z0-9_]*))(?:\^(-?\d+))?$")


def _frac(x, where="value"):
    if isinstance(x, bool):
        raise RelationError(f"{where}: booleans are not numbers")
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except ValueError:
            raise RelationError(f"{where}: cannot read {x!r} as a rational") from None
    if isinstance(x, float):
        return Fraction(x)
    raise RelationError(f"{where}: expected an integer or a rational string, got {type(x).__name__}")


def _matmul(a, b):
    return tuple(tuple(sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0])))
                 for i in range(len(a)))


def _matvec(a, v):
    return tuple(sum(a[i][k] * v[k] for k in range(len(v))) for i in range(len(a)))


def _identity(d):
    return tuple(tuple(Fraction(int(i == j)) for j in range(d)) for i in range(d))


def _inverse(a):
    d = len(a)
    m = [list(row) + [Fraction(int(i == j)) for j in range(d)] for i, row in enumerate(a)]
    for c in range(d):
        p = next((r for r in range(c, d) if m[r][c] != 0), None)
        if p is None:
            raise RelationError("holonomy matrix is singular")
        m[c], m[p] = m[p], m[c]
        piv = m[c][c]
        m[c] = [x / piv for x in m[c]]
        for r in range(d):
            if r != c and m[r][c] != 0:
                f = m[r][c]
                m[r] = [x - f * y for x, y in zip(m[r], m[c])]
    return tuple(tuple(row[d:]) for row in m)


def _transpose(a):
    return tuple(zip(*a))


@dataclass(frozen=True)
class AffineIsometry:
    """The map v -> A v + t on R^d, in lattice coordinates."""

    A: tuple
    t: tuple

    def __post_init__(self):
        A = tuple(tuple(_frac(x, "A") for x in row) for row in self.A)
        t = tuple(x if isinstance(x, float) else _frac(x, "t") for x in self.t)
        d = len(t)
        if len(A) != d or any(len(row) != d for row in A):
            raise DimensionError(f"A must be {d}x{d} to match a translation of length {d}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "t", t)

    @classmethod
    def translation(cls, v):
        return cls(_identity(len(v)), tuple(v))

    @property
    def dim(self):
        return len(self.t)

    def __matmul__(self, other):
        """Composition: (self @ other)(v) = self(other(v))."""
        return AffineIsometry(_matmul(self.A, other.A),
                              tuple(x + y for x, y in zip(_matvec(self.A, other.t), self.t)))

    def inverse(self):
        inv = _inverse(self.A)
        return AffineIsometry(inv, tuple(-x for x in _matvec(inv, self.t)))

    def power(self, k):
        base = self if k >= 0 else self.inverse()
        out = AffineIsometry(_identity(self.dim), (Fraction(0),) * self.dim)
        for _ in range(abs(k)):
            out = out @ base
        return out

    def apply(self, v):
        return tuple(x + y for x, y in zip(_matvec(self.A, v), self.t))

    def is_identity(self):
        return self.A == _identity(self.dim) and all(x == 0 for x in self.t)

    def linear_part_int(self):
        """A as an int tuple, or None if some entry is not an integer."""
        if any(x.denominator != 1 for row in self.A for x in row):
            return None
        return tuple(tuple(int(x) for x in row) for row in self.A)


def parse_word(word, names, dim):
    """Split a relation string into (symbol, power) pairs.

    Symbols are generator names or integers 1..dim for the lattice
    translations t1..td.
    """
    tokens = word.split()
    if not tokens:
        raise RelationError(f"empty relation word {word!r}")
    out = []
    for tok in tokens:
        m = _TOKEN.match(tok)
        if not m:
            raise RelationError(f"malformed token {tok!r} in {word!r}")
        k = int(m.group(3)) if m.group(3) is not None else 1
        if k == 0:
            raise RelationError(f"zero exponent in token {tok!r}")
        if m.group(1) is not None:
            j = int(m.group(1))
            if not 1 <= j <= dim:
                raise RelationError(f"translation t{j} out of range 1..{dim} in {word!r}")
            out.append((j, k))
        else:
            if m.group(2) not in names:
                raise RelationError(f"unknown generator {m.group(2)!r} in {word!r}")
            out.append((m.group(2), k))
    return tuple(out)


def format_word(word):
    parts = []
    for sym, k in word:
        s = f"t{sym}" if isinstance(sym, int) else sym
        parts.append(s if k == 1 else f"{s}^{k}")
    return " ".join(parts)


@dataclass(frozen=True)
class RelationCheck:
    """Outcome of evaluating every relation word."""

    exact_zero: bool
    max_residual: float
    worst: str


@dataclass(eq=False)
class BieberbachGroup:
    """A group of affine isometries of R^d containing a translation lattice.

    ``translations`` holds the vectors of the lattice generators t1..td in
    the ambient coordinates; for an undeformed group these are the unit
    vectors.  ``ambient`` is the inner product on those coordinates.
    """

    lattice: Lattice
    generators: dict
    relations: list = field(default_factory=list)
    name: str | None = None
    label: str | None = None
    orientable: bool | None = None
    translations: tuple | None = None
    ambient: Lattice | None = None
    h1: str | None = None

    def __post_init__(self):
        d = self.lattice.dim
        if self.translations is None:
            self.translations = tuple(tuple(Fraction(int(i == j)) for i in range(d)) for j in range(d))
        if self.ambient is None:
            self.ambient = self.lattice
        for gname, g in self.generators.items():
            if _TOKEN.match(gname) is None or re.fullmatch(r"t\d+", gname):
                raise RelationError(f"generator name {gname!r} is not a valid identifier or clashes with t1..td")
            if g.dim != d:
                raise DimensionError(f"generator {gname} acts on R^{g.dim}, lattice has dimension {d}")
        self.relations = [parse_word(w, self.generators, d) if isinstance(w, str) else tuple(w)
                          for w in self.relations]

    @property
    def dim(self):
        return self.lattice.dim

    def translation(self, j):
        return AffineIsometry.translation(self.translations[j - 1])

    def element(self, sym):
        return self.translation(sym) if isinstance(sym, int) else self.generators[sym]

    def evaluate(self, word):
        if isinstance(word, str):
            word = parse_word(word, self.generators, self.dim)
        out = AffineIsometry(_identity(self.dim), (Fraction(0),) * self.dim)
        for sym, k in word:
            out = out @ self.element(sym).power(k)
        return out

    def structural_relations(self):
        """Commutators of the t_j and g t_j g^-1 = t_{A a_j} for every generator."""
        d = self.dim
        words = []
        for i in range(1, d + 1):
            for j in range(i + 1, d + 1):
                words.append(((i, 1), (j, 1), (i, -1), (j, -1)))
        for gname, g in self.generators.items():
            A = g.linear_part_int()
            if A is None:
                raise RelationError(f"generator {gname} does not preserve the lattice (non-integral A)")
            for j in range(d):
                w = [(gname, 1), (j + 1, 1), (gname, -1)]
                w += [(i + 1, -A[i][j]) for i in range(d) if A[i][j]]
                words.append(tuple(w))
        return words

    def all_relations(self):
        return self.structural_relations() + list(self.relations)

    def conjugated(self, v):
        """The group t_v Gamma t_v^-1 for a lattice vector v."""
        tv = AffineIsometry.translation(tuple(Fraction(x) for x in v))
        gens = {k: tv @ g @ tv.inverse() for k, g in self.generators.items()}
        return BieberbachGroup(self.lattice, gens, [format_word(w) for w in self.relations],
                               name=self.name, label=self.label, orientable=self.orientable)

    def holonomy_cosets(self):
        """Representatives of Gamma / Z^d as {(A, t mod 1): shortest word}.

        Raises RelationError if the quotient is larger than MAX_HOLONOMY
        or if two cosets share a linear part (extra pure translations).
        """
        cached = self.__dict__.get("_cosets")
        if cached is not None:
            return cached
        d = self.dim
        ident = (_identity(d), (Fraction(0),) * d)
        seen = {ident: ()}
        queue = deque([ident])
        gens = list(self.generators.items())
        while queue:
            A, t = queue.popleft()
            for gname, g in gens:
                nA = _matmul(A, g.A)
                nt = tuple((x + y) % 1 for x, y in zip(_matvec(A, g.t), t))
                key = (nA, nt)
                if key not in seen:
                    seen[key] = seen[(A, t)] + (gname,)
                    if len(seen) > MAX_HOLONOMY:
                        raise RelationError(f"holonomy exceeds {MAX_HOLONOMY} elements; is the group discrete?")
                    queue.append(key)
        linear = [A for A, _ in seen]
        if len(set(linear)) != len(linear):
            raise RelationError("two cosets share a linear part: the lattice is not the full translation subgroup")
        self._cosets = seen
        return seen

    def validate(self):
        """Check orthogonality, lattice preservation, relations and freeness."""
        G = tuple(tuple(r) for r in self.lattice.gram.tolist())
        for gname, g in self.generators.items():
            A = g.linear_part_int()
            if A is None:
                raise RelationError(f"generator {gname}: A is not integral in the lattice basis")
            det = _exact_det_int(A)
            if abs(det) != 1:
                raise RelationError(f"generator {gname}: det A = {det}, expected +-1")
            if self.lattice.exact and _matmul(_matmul(_transpose(g.A), G), g.A) != G:
                raise RelationError(f"generator {gname}: A^T G A != G")
            if not self.lattice.exact:
                Af = np.array(A, float)
                Gf = self.lattice.matrix
                if not np.allclose(Af.T @ Gf @ Af, Gf, rtol=1e-12, atol=1e-12):
                    raise RelationError(f"generator {gname}: A^T G A != G")
        check = check_relations(self)
        if not check.exact_zero:
            raise RelationError(f"relation {check.worst!r} does not evaluate to the identity "
                                f"(residual {check.max_residual:.3e})")
        for (A, t), word in self.holonomy_cosets().items():
            if word and has_fixed_point(A, t):
                raise RelationError(f"element {' '.join(word)} has a fixed point on the torus")
        if self.h1 is not None:
            got = first_homology(self)
            if _normalize_h1(self.h1) != got:
                raise RelationError(f"first homology is {got}, expected {self.h1}")
        return self


def _exact_det_int(A):
    return int(Matrix(A).det())


def check_relations(group):
    """Evaluate every relation word; report the worst deviation from the identity.

    The numeric residual of a word is sqrt(|A - I|_F^2 + |t|^2) with |t|
    measured in the ambient inner product.
    """
    words = group.all_relations()
    if not words:
        raise RelationError("group has no relations to check")
    worst, worst_word, exact = 0.0, "", True
    amb = group.ambient.matrix
    for w in words:
        g = group.evaluate(w)
        dA = np.array(g.A, float) - np.eye(group.dim)
        t = np.array(g.t, float)
        res = math.sqrt(float(np.sum(dA * dA)) + max(float(t @ amb @ t), 0.0))
        if not g.is_identity():
            exact = False
        if res > worst or (not g.is_identity() and not worst_word):
            worst, worst_word = res, format_word(w)
    return RelationCheck(exact, worst, worst_word)


def _integer_rows(rows):
    out = []
    for r in rows:
        den = math.lcm(*[Fraction(x).denominator for x in r])
        out.append([int(Fraction(x) * den) for x in r])
    return out


def has_fixed_point(A, t):
    """Does v -> A v + t have a fixed point on R^k / Z^k?

    A fixed point exists iff t + l lies in the image of (I - A) for some
    integer vector l, i.e. N l = -N t is solvable over Z where the rows
    of N span the left kernel of (I - A).
    """
    k = len(t)
    if k == 0:
        return True
    M = Matrix(k, k, lambda i, j: Fraction(int(i == j)) - Fraction(A[i][j]))
    left = M.T.nullspace()
    if not left:
        return True
    N = Matrix(_integer_rows([list(v) for v in left]))
    c = -(N * Matrix([Fraction(x) for x in t]))
    D, S, _ = smith_normal_decomp(N, domain=ZZ)
    rhs = S * c
    for i in range(N.rows):
        d = D[i, i] if i < min(D.shape) else 0
        if d == 0:
            if rhs[i] != 0:
                return False
        elif Fraction(str(rhs[i])) % int(d) != 0:
            return False
    return True


def first_homology(group):
    """H_1 of the quotient as (free rank, torsion orders), via Smith normal form."""
    d = group.dim
    names = list(group.generators)
    cols = d + len(names)
    index = {j + 1: j for j in range(d)}
    index.update({name: d + i for i, name in enumerate(names)})
    rows = []
    for w in group.all_relations():
        row = [0] * cols
        for sym, k in w:
            row[index[sym]] += k
        if any(row):
            rows.append(row)
    if not rows:
        return (cols, ())
    D = smith_normal_decomp(Matrix(rows), domain=ZZ)[0]
    diag = [abs(int(D[i, i])) for i in range(min(D.shape))]
    rank = sum(1 for x in diag if x)
    torsion = tuple(sorted(x for x in diag if x > 1))
    return (cols - rank, torsion)


def _normalize_h1(text):
    free, torsion = 0, []
    for part in text.replace(" ", "").split("+"):
        if part == "Z":
            free += 1
        elif part.startswith("Z^"):
            free += int(part[2:])
        elif part.startswith("Z/"):
            torsion.append(int(part[2:]))
        elif part != "0":
            raise RelationError(f"cannot read homology summand {part!r}")
    return (free, tuple(sorted(torsion)))


def group_from_table(name, table, *, validate=True):
    """Build a group from one parsed TOML table (see data/flat3.toml)."""
    if "gram" not in table:
        raise RelationError(f"{name}: missing 'gram'")
    gram = [[_frac(x, f"{name}.gram") for x in row] for row in table["gram"]]
    lattice = Lattice(gram)
    gens = {}
    for i, g in enumerate(table.get("generators", [])):
        where = f"{name}.generators[{i}]"
        try:
            gname = g["name"]
            A = [[_frac(x, where + ".A") for x in row] for row in g["A"]]
            t = [_frac(x, where + ".t") for x in g["t"]]
        except KeyError as exc:
            raise RelationError(f"{where}: missing {exc.args[0]!r}") from None
        if gname in gens:
            raise RelationError(f"{where}: duplicate generator name {gname!r}")
        gens[gname] = AffineIsometry(A, t)
    group = BieberbachGroup(lattice, gens, list(table.get("relations", [])), name=name,
                            label=table.get("label"), orientable=table.get("orientable"),
                            h1=table.get("h1"))
    return group.validate() if validate else group


def load_groups(source, *, validate=True):
    """Read every group from a TOML file path or an already-parsed dict."""
    if isinstance(source, dict):
        data = source
    else:
        with open(source, "rb") as fh:
            data = tomllib.load(fh)
    return {name: group_from_table(name, table, validate=validate) for name, table in data.items()}


_CATALOG = None


def _catalog():
    global _CATALOG
    if _CATALOG is None:
        raw = resources.files(__package__).joinpath("data/flat3.toml").read_bytes()
        _CATALOG = load_groups(tomllib.loads(raw.decode("utf-8")))
    return _CATALOG


def catalog_tags():
    return tuple(_catalog())


def catalog_flat3(tag):
    """One of the ten compact flat 3-manifold groups, by letter (A-J) or label (G1-G6, B1-B4)."""
    cat = _catalog()
    key = str(tag).strip()
    if key.upper() in cat:
        return cat[key.upper()]
    for g in cat.values():
        if g.label and g.label.upper() == key.upper():
            return g
    raise KeyError(f"unknown flat 3-manifold {tag!r}; expected one of {', '.join(cat)} or G1-G6, B1-B4")


@dataclass(frozen=True)
class AdmissibilityReport:
    """Whether a filling curve is compatible with the group action."""

    sigma: FillingCurve
    parallel_ok: dict
    core_free_ok: bool
    verdict: bool
    witness: str | None

    def to_dict(self):
        return {
            "sigma": list(self.sigma.coeffs),
            "length": self.sigma.length(),
            "parallel_ok": dict(self.parallel_ok),
            "core_free_ok": self.core_free_ok,
            "verdict": self.verdict,
            "witness": self.witness,
        }


def _preserves_line(A, s):
    As = _matvec(A, s)
    return As == tuple(s) or As == tuple(-x for x in s)


def is_admissible(group, sigma):
    """Check that every element maps the line of sigma to itself and that
    the action descends freely to the core torus R^d / (R sigma + Z^d)."""
    s = as_curve(group.lattice, sigma)
    sv = tuple(Fraction(x) for x in s.coeffs)
    parallel = {name: _preserves_line(g.A, sv) for name, g in group.generators.items()}
    bad = [name for name, ok in parallel.items() if not ok]
    if bad:
        return AdmissibilityReport(s, parallel, False, False, bad[0])
    B = complete_basis(group.lattice, s)
    Bf = tuple(tuple(Fraction(x) for x in row) for row in B.matrix)
    Binv = _inverse(Bf)
    for (A, t), word in group.holonomy_cosets().items():
        if not word:
            continue
        Ab = _matmul(_matmul(Binv, A), Bf)
        tb = _matvec(Binv, t)
        core_A = tuple(row[1:] for row in Ab[1:])
        if has_fixed_point(core_A, tb[1:]):
            return AdmissibilityReport(s, parallel, False, False, " ".join(word))
    return AdmissibilityReport(s, parallel, True, True, None)


def _exact_lambda(lam):
    check_lambda(lam)
    return lam if isinstance(lam, Rational) else Fraction(lam)


def deform_action(group, sigma, lam, *, force=False):
    """Shrink the sigma-direction of every translation by lam.

    Linear parts are kept; lattice generators and the translation parts
    of the generators both pass through the same projection-scaling map.
    With ``force=True`` a non-admissible sigma is deformed anyway, which
    is how relation failures are exhibited.
    """
    lam = _exact_lambda(lam)
    s = as_curve(group.lattice, sigma)
    if not force:
        rep = is_admissible(group, s)
        if not rep.verdict:
            raise AdmissibilityError(f"sigma={s.coeffs} is not admissible for {group.name or 'the group'} "
                                     f"(fails at {rep.witness})")
    amb = group.ambient

    def shrink(v):
        return scale_along(v, s.coeffs, amb, lam)

    trans = tuple(shrink(v) for v in group.translations)
    gens = {k: AffineIsometry(g.A, shrink(g.t)) for k, g in group.generators.items()}
    gram = [[amb.inner(u, v) for v in trans] for u in trans]
    return BieberbachGroup(Lattice(gram, allow_degenerate=True), gens,
                           [format_word(w) for w in group.relations], name=group.name,
                           label=group.label, orientable=group.orientable,
                           translations=trans, ambient=amb)


def enumerate_admissible(group, lmin, lmax, *, workers=None):
    """Admissibility reports for every filling curve with length in [lmin, lmax].

    Candidates come from the lattice enumeration in its canonical order;
    results keep that order whatever ``workers`` is.
    """
    cands = enumerate_fillings(group.lattice, lmin, lmax)
    group.holonomy_cosets()  # fill the cache before fanning out
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda c: is_admissible(group, c), cands))
    else:
        reports = [is_admissible(group, c) for c in cands]
    return [r for r in reports if r.verdict]
