"""Flat tori, filling curves, integral basis completion and the
one-parameter family of flat structures that shrinks a chosen curve.

A flat torus R^d / Z^d is described by the Gram matrix of its lattice
basis.  Gram entries that are ints or Fractions are kept exact; anything
else is converted to float64 and the lattice is flagged inexact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Integral, Rational

import numpy as np
from scipy.spatial import Voronoi

from .errors import DimensionError, DomainError, NonPrimitiveError

SYMMETRY_RTOL = 1e-12
WINDOW_RTOL = 1e-12


def _is_exact_scalar(x):
    return isinstance(x, Rational) and not isinstance(x, bool)


def _scaled_ints(values):
    """Integers k_i and a common denominator D with values_i = k_i / D."""
    den = math.lcm(*(x.denominator for x in values))
    return [x.numerator * (den // x.denominator) for x in values], den


def _exact_det(rows):
    """Determinant of a small Fraction matrix by Gaussian elimination."""
    a = [list(map(Fraction, r)) for r in rows]
    d = len(a)
    det = Fraction(1)
    for c in range(d):
        pivot = next((r for r in range(c, d) if a[r][c] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != c:
            a[c], a[pivot] = a[pivot], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, d):
            f = a[r][c] / a[c][c]
            if f:
                for k in range(c, d):
                    a[r][k] -= f * a[c][k]
    return det


class Lattice:
    """A flat torus given by the Gram matrix of its basis vectors.

    Parameters
    ----------
    gram : array-like, d x d
        Inner products <v_i, v_j>.  Must be symmetric positive-definite.
    allow_degenerate : bool
        Accept a positive-semidefinite Gram.  Only used for the collapsed
        end of a deformation, where one generator has length zero.
    """

    def __init__(self, gram, *, allow_degenerate=False):
        rows = [list(r) for r in gram]
        d = len(rows)
        if d == 0 or any(len(r) != d for r in rows):
            raise DimensionError(f"gram must be a non-empty square matrix, got rows of lengths {[len(r) for r in rows]}")
        exact = all(_is_exact_scalar(x) for r in rows for x in r)
        if exact:
            g = np.array([[Fraction(x) for x in r] for r in rows], dtype=object)
            if any(g[i, j] != g[j, i] for i in range(d) for j in range(i)):
                raise DomainError("gram is not symmetric")
        else:
            g = np.array(rows, dtype=float)
            if not np.all(np.isfinite(g)):
                raise DomainError("gram has non-finite entries")
            scale = max(1.0, float(np.max(np.abs(g))))
            if np.max(np.abs(g - g.T)) > SYMMETRY_RTOL * scale:
                raise DomainError("gram is not symmetric")
            g = 0.5 * (g + g.T)
        self._gram = g
        if exact:
            flat, den = _scaled_ints(list(g.flat))
            self._int_gram = [flat[i * d:(i + 1) * d] for i in range(d)], den
        self.dim = d
        self.exact = exact
        self.degenerate = False
        self._check_definite(allow_degenerate)

    def _check_definite(self, allow_degenerate):
        g = self._gram
        if self.exact:
            minors = [_exact_det(g[:k, :k].tolist()) for k in range(1, self.dim + 1)]
            if all(m > 0 for m in minors):
                return
        else:
            try:
                np.linalg.cholesky(g)
                return
            except np.linalg.LinAlgError:
                pass
        if allow_degenerate:
            eig = np.linalg.eigvalsh(self.matrix)
            if eig[0] >= -1e-12 * max(1.0, eig[-1]):
                self.degenerate = True
                return
            raise DomainError(f"gram is not positive-semidefinite (smallest eigenvalue {eig[0]:.3e})")
        raise DomainError("gram is not positive-definite (a leading principal minor is <= 0)")

    @property
    def gram(self):
        """Gram matrix; an object array of Fractions when exact."""
        return self._gram.copy()

    @property
    def matrix(self):
        """Gram matrix as float64."""
        return np.array(self._gram, dtype=float)

    def inner(self, u, v):
        """<u, v> for coefficient vectors u, v (exact when possible)."""
        u = list(u)
        v = list(v)
        if len(u) != self.dim or len(v) != self.dim:
            raise DimensionError(f"expected vectors of length {self.dim}")
        g = self._gram
        if self.exact and all(map(_is_exact_scalar, u + v)):
            # integer arithmetic throughout, one Fraction at the end
            rows, gden = self._int_gram
            ku, uden = _scaled_ints(u)
            kv, vden = _scaled_ints(v)
            total = sum(a * sum(x * b for x, b in zip(row, kv)) for a, row in zip(ku, rows) if a)
            return Fraction(total, gden * uden * vden)
        return float(np.asarray(u, float) @ self.matrix @ np.asarray(v, float))

    def in_basis(self, basis, *, allow_degenerate=False):
        """The same torus with Gram taken in the columns of ``basis``."""
        b = np.array(basis, dtype=object if self.exact else float)
        if b.shape != (self.dim, self.dim):
            raise DimensionError(f"basis must be {self.dim}x{self.dim}")
        if self.exact:
            b = np.array([[Fraction(x) for x in r] for r in b.tolist()], dtype=object)
        return Lattice((b.T.dot(self._gram).dot(b)).tolist(), allow_degenerate=allow_degenerate)

    def area(self):
        """Covolume sqrt(det gram)."""
        return math.sqrt(max(float(np.linalg.det(self.matrix)), 0.0))

    def scaled(self, c):
        """Lattice with every length multiplied by c."""
        c2 = c * c
        if self.exact and _is_exact_scalar(c2):
            return Lattice((self._gram * Fraction(c2)).tolist())
        return Lattice(self.matrix * float(c2))

    def to_rows(self):
        """Row-major nested lists (Fractions rendered as strings)."""
        if self.exact:
            return [[str(x) if x.denominator != 1 else int(x) for x in r] for r in self._gram.tolist()]
        return self.matrix.tolist()

    def __eq__(self, other):
        if not isinstance(other, Lattice) or other.dim != self.dim:
            return NotImplemented
        if self.exact and other.exact:
            return bool(np.all(self._gram == other._gram))
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash((self.dim, tuple(map(str, self._gram.ravel()))))

    def __repr__(self):
        return f"Lattice(dim={self.dim}, exact={self.exact}, gram={self.to_rows()})"


def _as_int_tuple(coeffs):
    out = []
    for c in coeffs:
        if isinstance(c, (bool, np.bool_)):
            raise DomainError("filling-curve coefficients must be integers")
        if isinstance(c, (Integral, np.integer)):
            out.append(int(c))
        elif isinstance(c, (float, Fraction)) and float(c).is_integer():
            out.append(int(c))
        else:
            raise DomainError(f"filling-curve coefficient {c!r} is not an integer")
    return tuple(out)


@dataclass(frozen=True)
class FillingCurve:
    """A primitive integer vector in the lattice of ``host``."""

    coeffs: tuple
    host: Lattice

    def __post_init__(self):
        coeffs = _as_int_tuple(self.coeffs)
        object.__setattr__(self, "coeffs", coeffs)
        if len(coeffs) != self.host.dim:
            raise DimensionError(f"curve has {len(coeffs)} coefficients but the torus has dimension {self.host.dim}")
        g = math.gcd(*coeffs)
        if g != 1:
            raise NonPrimitiveError(coeffs, g)

    def canonical(self):
        """Representative of the class modulo sign: first nonzero entry positive."""
        first = next(c for c in self.coeffs if c)
        if first > 0:
            return self
        return FillingCurve(tuple(-c for c in self.coeffs), self.host)

    def norm2(self):
        return self.host.inner(self.coeffs, self.coeffs)

    def length(self):
        return curve_length(self.host, self)

    def __iter__(self):
        return iter(self.coeffs)

    def __len__(self):
        return len(self.coeffs)


def as_curve(L, sigma):
    """Coerce a coefficient sequence into a FillingCurve on L."""
    if isinstance(sigma, FillingCurve):
        if sigma.host.dim != L.dim:
            raise DimensionError(f"curve lives on a {sigma.host.dim}-torus, expected {L.dim}")
        if sigma.host is L:
            return sigma
        return FillingCurve(sigma.coeffs, L)
    return FillingCurve(tuple(sigma), L)


def curve_length(L, sigma):
    """Length of the closed geodesic with coefficient vector sigma."""
    s = as_curve(L, sigma)
    return math.sqrt(float(L.inner(s.coeffs, s.coeffs)))


@dataclass(frozen=True)
class CompletedBasis:
    """Unimodular integer matrix whose first column is the filling curve."""

    matrix: tuple

    @property
    def sigma(self):
        return tuple(row[0] for row in self.matrix)

    def columns(self):
        d = len(self.matrix)
        return [tuple(self.matrix[i][j] for i in range(d)) for j in range(d)]

    def array(self):
        return np.array(self.matrix, dtype=np.int64)

    def det(self):
        return int(_exact_det(self.matrix))


def _extended_gcd(a, b):
    """Return (g, x, y) with a*x + b*y = g >= 0."""
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    if a < 0:
        a, x0, y0 = -a, -x0, -y0
    return a, x0, y0


def complete_basis(L, sigma):
    """Extend a primitive vector to an integral basis (sigma, b_2, ..., b_d).

    Each b_i is then size-reduced against sigma so that
    0 <= <b_i, sigma> < |sigma|^2.  The determinant is +1 for d > 1; on a
    circle it is the sign of sigma.
    """
    s = as_curve(L, sigma)
    d = L.dim
    v = list(s.coeffs)
    # columns of m form a basis and sigma = m @ v throughout
    m = [[int(i == j) for j in range(d)] for i in range(d)]
    for i in range(d - 1, 0, -1):
        if v[i] == 0:
            continue
        g, a, b = _extended_gcd(v[0], v[i])
        p, q = v[0] // g, v[i] // g
        v[0], v[i] = g, 0
        for row in m:
            c0, ci = row[0], row[i]
            row[0], row[i] = c0 * p + ci * q, -c0 * b + ci * a
    if v[0] < 0:
        # only reachable for d == 1
        for row in m:
            row[0] = -row[0]
    n2 = L.inner(s.coeffs, s.coeffs)
    for j in range(1, d):
        col = [m[i][j] for i in range(d)]
        k = math.floor(L.inner(col, s.coeffs) / n2)
        if k:
            for i in range(d):
                m[i][j] -= k * s.coeffs[i]
    # a circle has no second column to absorb the sign
    if d > 1 and _exact_det(m) < 0:
        for row in m:
            row[-1] = -row[-1]
    return CompletedBasis(tuple(tuple(r) for r in m))


def check_lambda(lam):
    if not 0 <= lam <= 1:
        raise DomainError(f"deformation parameter must lie in [0, 1], got {lam}")


def scale_along(vector, sigma, L, lam):
    """Rescale the sigma-component of ``vector`` by lam, keeping the rest.

    v -> v + (lam - 1) <v, sigma>/|sigma|^2 sigma.  Used for lattice
    generators and for the translation parts of group elements alike.
    """
    check_lambda(lam)
    sigma = tuple(sigma)
    coef = (lam - 1) * L.inner(vector, sigma) / L.inner(sigma, sigma)
    return tuple(x + coef * s for x, s in zip(vector, sigma))


def deform_flat_structure(L, basis, lam):
    """Gram matrix of the generators (lam*sigma, b_2(lam), ..., b_d(lam)).

    At lam = 1 this is the original torus written in the completed basis;
    at lam = 0 the first generator collapses and the rest become
    orthogonal to sigma.
    """
    check_lambda(lam)
    if len(basis.matrix) != L.dim:
        raise DimensionError(f"basis is {len(basis.matrix)}x{len(basis.matrix)}, torus has dimension {L.dim}")
    sigma = basis.sigma
    vecs = [scale_along(col, sigma, L, lam) for col in basis.columns()]
    d = len(vecs)
    gram = [[None] * d for _ in range(d)]
    for i in range(d):
        for j in range(i, d):
            gram[i][j] = gram[j][i] = L.inner(vecs[i], vecs[j])
    return Lattice(gram, allow_degenerate=True)


def _minimum_eigenvalue(L):
    return float(np.linalg.eigvalsh(L.matrix)[0])


def enumerate_fillings(L, lmin, lmax):
    """All primitive classes (mod sign) with length in [lmin, lmax].

    Returns a tuple of FillingCurve in lexicographic order of the
    canonical representative.  The search box side follows from
    |v|_gram^2 >= lambda_min |v|_euclid^2.
    """
    if not (math.isfinite(lmin) and math.isfinite(lmax)):
        raise DomainError("length window must be finite")
    if not 0 <= lmin <= lmax:
        raise DomainError(f"need 0 <= Lmin <= Lmax, got [{lmin}, {lmax}]")
    d = L.dim
    g = L.matrix
    bound = int(math.floor(lmax * (1 + WINDOW_RTOL) / math.sqrt(_minimum_eigenvalue(L))))
    lo2 = (lmin * (1 - WINDOW_RTOL)) ** 2
    hi2 = (lmax * (1 + WINDOW_RTOL)) ** 2
    found = []
    axis = np.arange(-bound, bound + 1)
    # split the box on the first coordinate to keep memory flat
    for first in range(0, bound + 1):
        if d == 1:
            pts = np.array([[first]])
        else:
            rest = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1)
            pts = np.hstack([np.full((rest.shape[0], 1), first), rest])
        pts = pts[_canonical_mask(pts)]
        if pts.size == 0:
            continue
        n2 = np.einsum("ij,jk,ik->i", pts, g, pts)
        keep = (n2 >= lo2) & (n2 <= hi2)
        pts = pts[keep]
        pts = pts[np.gcd.reduce(np.abs(pts), axis=1) == 1]
        found.extend(map(tuple, pts.tolist()))
    found.sort()
    return tuple(FillingCurve(c, L) for c in found)


def _canonical_mask(pts):
    nz = pts != 0
    has = nz.any(axis=1)
    first_idx = np.argmax(nz, axis=1)
    first_val = pts[np.arange(len(pts)), first_idx]
    return has & (first_val > 0)


def torus_diameter(L):
    """Intrinsic diameter of the flat torus (the lattice covering radius)."""
    g = L.matrix
    d = L.dim
    if d == 1:
        return 0.5 * math.sqrt(g[0, 0])
    # Cholesky factor maps coefficient vectors to Euclidean positions
    c = np.linalg.cholesky(g).T
    span = 2 if d > 2 else 3
    axis = np.arange(-span, span + 1)
    coeffs = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
    pts = coeffs @ c.T
    origin = int(np.flatnonzero(np.all(coeffs == 0, axis=1))[0])
    vor = Voronoi(pts)
    region = vor.regions[vor.point_region[origin]]
    if -1 in region or not region:
        raise DomainError("Voronoi cell of the origin is unbounded; lattice too skewed for the search box")
    return float(np.max(np.linalg.norm(vor.vertices[region], axis=1)))
