"""Exterior algebra over R^n with exact norm oracles.

Wedge products, the algebraic Hodge star, and the three norms on
k-vectors: Euclidean, mass (convex hull of the unit decomposables) and
comass (its dual).  Degrees 0, 1, 2, n-2, n-1, n have exact oracles; the
oracle at degree 2 is the spectral normal form of the associated
skew-symmetric matrix, pulled through the star for degree n-2.  All other
degrees get certified brackets instead of point values.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
import scipy.linalg
import scipy.optimize

MultiIndex = tuple  # strictly increasing tuple of axis indices

_EIGHT_ZERO = 1e-14


# ---------------------------------------------------------------------------
# basis bookkeeping
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> tuple:
    """Lexicographically ordered k-subsets of range(n)."""
    if not 0 <= k <= n:
        raise ValueError(f"degree {k} out of range for dimension {n}")
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def _index_of(n: int, k: int) -> dict:
    return {axes: i for i, axes in enumerate(multi_indices(n, k))}


def _merge_sign(a, b) -> int:
    # sign of sorting the concatenation of two disjoint increasing tuples
    inversions = sum(1 for x in a for y in b if x > y)
    return -1 if inversions % 2 else 1


def _perm_sign(seq) -> int:
    inversions = sum(
        1 for i in range(len(seq)) for j in range(i + 1, len(seq))
        if seq[i] > seq[j]
    )
    return -1 if inversions % 2 else 1


class KVector:
    """A degree-k multivector over R^n in the lexicographic wedge basis."""

    __slots__ = ("n", "k", "coeffs")

    def __init__(self, n: int, k: int, coeffs):
        if n < 1:
            raise ValueError("ambient dimension must be >= 1")
        if not 0 <= k <= n:
            raise ValueError(f"degree {k} out of range for dimension {n}")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (comb(n, k),):
            raise ValueError(
                f"expected {comb(n, k)} coefficients for (n={n}, k={k}), "
                f"got shape {coeffs.shape}"
            )
        self.n = n
        self.k = k
        self.coeffs = coeffs

    @classmethod
    def zero(cls, n: int, k: int) -> "KVector":
        return cls(n, k, np.zeros(comb(n, k)))

    @classmethod
    def basis(cls, n: int, axes, coeff: float = 1.0) -> "KVector":
        """coeff * e_{axes}, axes a strictly increasing 0-based tuple."""
        axes = tuple(axes)
        k = len(axes)
        v = cls.zero(n, k)
        v.coeffs[_index_of(n, k)[axes]] = coeff
        return v

    @classmethod
    def from_vectors(cls, *vectors) -> "KVector":
        """Wedge of 1-vectors; always decomposable."""
        vecs = [np.asarray(u, dtype=float) for u in vectors]
        n = len(vecs[0])
        out = cls(n, 1, vecs[0])
        for u in vecs[1:]:
            out = wedge(out, cls(n, 1, u))
        return out

    def copy(self) -> "KVector":
        return KVector(self.n, self.k, self.coeffs.copy())

    def dot(self, other: "KVector") -> float:
        self._check_compatible(other)
        return float(self.coeffs @ other.coeffs)

    def _check_compatible(self, other):
        if self.n != other.n or self.k != other.k:
            raise ValueError(
                f"incompatible k-vectors: (n={self.n}, k={self.k}) vs "
                f"(n={other.n}, k={other.k})"
            )

    def __add__(self, other):
        self._check_compatible(other)
        return KVector(self.n, self.k, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_compatible(other)
        return KVector(self.n, self.k, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return KVector(self.n, self.k, self.coeffs * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return KVector(self.n, self.k, -self.coeffs)

    def __repr__(self):
        terms = []
        for axes, c in zip(multi_indices(self.n, self.k), self.coeffs):
            if abs(c) > _EIGHT_ZERO:
                label = "e" + "".join(str(a + 1) for a in axes) if axes else "1"
                terms.append(f"{c:+.6g}*{label}")
        body = " ".join(terms) if terms else "0"
        return f"KVector(n={self.n}, k={self.k}: {body})"


# ---------------------------------------------------------------------------
# wedge product and star
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _wedge_table(n: int, ka: int, kb: int):
    """(ia, ib, iout, sign) arrays for the bilinear wedge at fixed degrees."""
    out_lookup = _index_of(n, ka + kb)
    ia_l, ib_l, io_l, sg_l = [], [], [], []
    for ia, A in enumerate(multi_indices(n, ka)):
        a_set = set(A)
        for ib, B in enumerate(multi_indices(n, kb)):
            if a_set & set(B):
                continue
            ia_l.append(ia)
            ib_l.append(ib)
            io_l.append(out_lookup[tuple(sorted(A + B))])
            sg_l.append(_merge_sign(A, B))
    return (np.array(ia_l, dtype=int), np.array(ib_l, dtype=int),
            np.array(io_l, dtype=int), np.array(sg_l, dtype=float))


def wedge(a: KVector, b: KVector) -> KVector:
    """Graded-anticommutative product a ^ b."""
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: {a.n} vs {b.n}")
    if a.k + b.k > a.n:
        raise ValueError(f"degree overflow: {a.k} + {b.k} > {a.n}")
    ia, ib, io, sg = _wedge_table(a.n, a.k, b.k)
    out = np.zeros(comb(a.n, a.k + b.k))
    np.add.at(out, io, sg * a.coeffs[ia] * b.coeffs[ib])
    return KVector(a.n, a.k + b.k, out)


@lru_cache(maxsize=None)
def _star_table(n: int, k: int):
    """(iout, sign) per input index: e_I -> sign(I, I^c) e_{I^c}."""
    out_lookup = _index_of(n, n - k)
    io, sg = [], []
    for I in multi_indices(n, k):
        comp = tuple(a for a in range(n) if a not in I)
        io.append(out_lookup[comp])
        sg.append(_perm_sign(I + comp))
    return np.array(io, dtype=int), np.array(sg, dtype=float)


def star_alg(v: KVector) -> KVector:
    """Algebraic Hodge star: alpha ^ star(beta) = <alpha, beta> e_{1..n}."""
    io, sg = _star_table(v.n, v.k)
    out = np.zeros(comb(v.n, v.n - v.k))
    out[io] = sg * v.coeffs
    return KVector(v.n, v.n - v.k, out)


def apply_linear(v: KVector, Q) -> KVector:
    """Pushforward of v along the linear map Q (k-th compound of Q)."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (v.n, v.n):
        raise ValueError("Q must be n x n")
    if v.k == 0:
        return v.copy()
    idxs = multi_indices(v.n, v.k)
    out = np.zeros_like(v.coeffs)
    for j, J in enumerate(idxs):
        rows = list(J)
        acc = 0.0
        for i, I in enumerate(idxs):
            c = v.coeffs[i]
            if c == 0.0:
                continue
            acc += c * np.linalg.det(Q[np.ix_(rows, list(I))])
        out[j] = acc
    return KVector(v.n, v.k, out)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def euclid_norm(v: KVector) -> float:
    """l2 norm of the coefficients (the wedge basis is orthonormal)."""
    return float(np.linalg.norm(v.coeffs))


@dataclass
class NormalForm2:
    """Spectral normal form of a 2-vector: v = sum_i lambdas[i] f_{2i} ^ f_{2i+1}.

    ``frame`` holds an orthonormal basis of R^n as columns; pairs of
    consecutive columns carry the nonnegative, non-increasing lambdas.
    """

    lambdas: np.ndarray
    frame: np.ndarray

    def reconstruct(self) -> KVector:
        n = self.frame.shape[0]
        out = KVector.zero(n, 2)
        for i, lam in enumerate(self.lambdas):
            if lam == 0.0:
                continue
            pair = KVector.from_vectors(self.frame[:, 2 * i],
                                        self.frame[:, 2 * i + 1])
            out = out + lam * pair
        return out


def _skew_matrix(v: KVector) -> np.ndarray:
    n = v.n
    A = np.zeros((n, n))
    for (i, j), c in zip(multi_indices(n, 2), v.coeffs):
        A[i, j] = c
        A[j, i] = -c
    return A


def normal_form_2(v: KVector) -> NormalForm2:
    """Normal form of a 2-vector from the real Schur form of its skew matrix."""
    if v.k != 2:
        raise ValueError("normal_form_2 requires degree 2")
    n = v.n
    scale = float(np.max(np.abs(v.coeffs), initial=0.0))
    if scale == 0.0:
        return NormalForm2(np.zeros(n // 2), np.eye(n))
    A = _skew_matrix(v)
    T, Z = scipy.linalg.schur(A, output="real")
    pairs = []   # (lambda, col_a, col_b)
    singles = []
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            b = 0.5 * (T[i, i + 1] - T[i + 1, i])
            ca, cb = Z[:, i].copy(), Z[:, i + 1].copy()
            if b < 0.0:
                ca, cb = cb, ca
                b = -b
            pairs.append((b, ca, cb))
            i += 2
        else:
            singles.append(Z[:, i].copy())
            i += 1
    pairs.sort(key=lambda t: -t[0])
    lambdas = np.zeros(n // 2)
    cols = []
    for j, (lam, ca, cb) in enumerate(pairs):
        lambdas[j] = lam
        cols.extend([ca, cb])
    cols.extend(singles)
    frame = np.column_stack(cols)
    nf = NormalForm2(lambdas, frame)
    resid = euclid_norm(nf.reconstruct() - v)
    if resid > 1e-10 * (1.0 + euclid_norm(v)):
        raise RuntimeError(f"normal form reconstruction residual {resid:.3e}")
    return nf


@dataclass
class MassBracket:
    """Certified lower/upper bounds on a norm; exact when the oracle applies."""

    lower: float
    upper: float
    exact: bool

    @property
    def value(self) -> float:
        return self.upper

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def _exact_degree(n: int, k: int) -> bool:
    return k in (0, 1, n - 1, n) or k == 2 or k == n - 2


def mass_bracket(v: KVector, samples: int = 500, seed: int = 0) -> MassBracket:
    """Mass norm, exact at oracle degrees, else a certified [lower, upper]."""
    n, k = v.n, v.k
    eu = euclid_norm(v)
    if eu == 0.0:
        return MassBracket(0.0, 0.0, True)
    if k in (0, 1, n - 1, n):
        return MassBracket(eu, eu, True)
    if k == 2 or k == n - 2:
        w = v if k == 2 else star_alg(v)
        lam = normal_form_2(w).lambdas
        m = float(np.sum(lam))
        return MassBracket(m, m, True)
    lower, upper = _mass_lp_bounds(v, samples=samples, seed=seed)
    return MassBracket(max(lower, eu), upper, False)


def mass_norm(v: KVector) -> float:
    """Mass norm; for degrees without an exact oracle this is the certified
    upper bound (see mass_bracket for the gap)."""
    return mass_bracket(v).value


def _random_unit_simple(rng, n, k) -> KVector:
    while True:
        vecs = rng.standard_normal((k, n))
        w = KVector.from_vectors(*vecs)
        norm = euclid_norm(w)
        if norm > 1e-8:
            return (1.0 / norm) * w


def _mass_lp_bounds(v: KVector, samples: int, seed: int, rounds: int = 3):
    """Upper bound from an l1 decomposition LP over sampled unit simples,
    tightened by a few cutting-plane rounds; rigorous lower bound from the
    rescaled LP dual (never better than the Euclidean bound)."""
    n, k = v.n, v.k
    rng = np.random.default_rng(seed)
    dim = comb(n, k)
    cols = [KVector.basis(n, axes).coeffs for axes in multi_indices(n, k)]
    cols += [_random_unit_simple(rng, n, k).coeffs for _ in range(samples)]
    upper = float(np.sum(np.abs(v.coeffs)))
    lower = euclid_norm(v)
    for _ in range(rounds):
        B = np.column_stack(cols)
        m = B.shape[1]
        c = np.ones(2 * m)
        A_eq = np.hstack([B, -B])
        res = scipy.optimize.linprog(c, A_eq=A_eq, b_eq=v.coeffs,
                                     bounds=(0, None), method="highs")
        if not res.success:
            break
        upper = min(upper, float(res.fun))
        y = np.asarray(res.eqlin.marginals, dtype=float)
        ynorm = np.linalg.norm(y)
        if ynorm > 0:
            lower = max(lower, float(v.coeffs @ y) / max(ynorm, 1.0)
                        if ynorm <= 1.0 else float(v.coeffs @ y) / ynorm)
        # cutting plane: most violated unit simple under the dual certificate
        wv = KVector(n, k, y)
        viol, frame = _frame_ascent(wv, restarts=8, seed=int(rng.integers(2**31)))
        if viol <= 1.0 + 1e-9:
            break
        cols.append(_frame_simple(frame).coeffs)
    return lower, upper


def comass_bracket(v: KVector, restarts: int = 64, seed: int = 0) -> MassBracket:
    """Comass norm; exact at oracle degrees, else [ascent value, Euclid]."""
    n, k = v.n, v.k
    eu = euclid_norm(v)
    if eu == 0.0:
        return MassBracket(0.0, 0.0, True)
    if k in (0, 1, n - 1, n):
        return MassBracket(eu, eu, True)
    if k == 2 or k == n - 2:
        w = v if k == 2 else star_alg(v)
        lam = normal_form_2(w).lambdas
        m = float(lam[0]) if lam.size else 0.0
        return MassBracket(m, m, True)
    best, _ = _frame_ascent(v, restarts=restarts, seed=seed)
    return MassBracket(best, eu, False)


def comass_norm(v: KVector) -> float:
    """Comass norm; for degrees without an exact oracle this is the best
    multi-start ascent value, a lower bound."""
    br = comass_bracket(v)
    return br.value if br.exact else br.lower


# ---------------------------------------------------------------------------
# Grassmannian ascent (comass at degrees without an exact oracle)
# ---------------------------------------------------------------------------

def _frame_simple(F) -> KVector:
    return KVector.from_vectors(*[F[:, j] for j in range(F.shape[1])])


def _frame_value_grad(v: KVector, F):
    idxs = multi_indices(v.n, v.k)
    val = 0.0
    G = np.zeros_like(F)
    for pos, I in enumerate(idxs):
        c = v.coeffs[pos]
        if c == 0.0:
            continue
        rows = list(I)
        M = F[rows, :]
        val += c * float(np.linalg.det(M))
        G[rows, :] += c * _cofactor(M)
    return val, G


def _cofactor(M):
    k = M.shape[0]
    if k == 1:
        return np.ones((1, 1))
    C = np.empty_like(M)
    for a in range(k):
        for b in range(k):
            minor = np.delete(np.delete(M, a, axis=0), b, axis=1)
            C[a, b] = ((-1) ** (a + b)) * float(np.linalg.det(minor))
    return C


def _qr_retract(X):
    Q, R = np.linalg.qr(X)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _frame_ascent(v: KVector, restarts: int, seed: int, gtol: float = 1e-8,
                  max_iters: int = 400):
    """Projected-gradient ascent of <v, f_1 ^ ... ^ f_k> over orthonormal
    k-frames; returns (best value, best frame)."""
    n, k = v.n, v.k
    rng = np.random.default_rng(seed)
    best_val = 0.0
    best_F = None
    for r in range(restarts):
        if r == 0:
            # start at the dominant basis plane
            pos = int(np.argmax(np.abs(v.coeffs)))
            axes = multi_indices(n, k)[pos]
            F = np.zeros((n, k))
            for j, a in enumerate(axes):
                F[a, j] = 1.0
        else:
            F = _qr_retract(rng.standard_normal((n, k)))
        val, G = _frame_value_grad(v, F)
        if val < 0.0:
            F[:, 0] = -F[:, 0]
            val, G = _frame_value_grad(v, F)
        step = 1.0
        for _ in range(max_iters):
            S = F.T @ G
            G_t = G - F @ (0.5 * (S + S.T))
            gn = float(np.linalg.norm(G_t))
            if gn <= gtol:
                break
            improved = False
            while step > 1e-14:
                F_new = _qr_retract(F + step * G_t)
                val_new, G_new = _frame_value_grad(v, F_new)
                if val_new > val + 1e-4 * step * gn * gn:
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
            F, val, G = F_new, val_new, G_new
            step = min(step * 2.0, 1e3)
        if val > best_val:
            best_val, best_F = val, F.copy()
    if best_F is None:
        best_F = _qr_retract(np.eye(n)[:, :k])
    return best_val, best_F


# ---------------------------------------------------------------------------
# decomposability and mass decompositions
# ---------------------------------------------------------------------------

def is_decomposable(v: KVector, tol: float = 1e-9):
    """Norm-equality test for decomposability.

    Returns True/False at degrees with an exact mass oracle (with the
    v ^ v cross-check at degree 2) and None when the certified bracket
    cannot decide.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    eu = euclid_norm(v)
    if eu == 0.0:
        return True
    br = mass_bracket(v)
    if br.exact:
        result = abs(br.value - eu) <= tol * eu
        if v.k == 2 and 2 * v.k <= v.n:
            result = result and euclid_norm(wedge(v, v)) <= tol * eu * eu
        return result
    if br.lower > (1.0 + tol) * eu:
        return False
    if br.upper <= (1.0 + tol) * eu:
        return True
    return None


@dataclass
class MassDecomposition:
    """v = sum of decomposable terms with total |b_1| + |b_2| + ... minimal."""

    terms: list
    total: float

    def reconstruct(self, like: KVector) -> KVector:
        out = KVector.zero(like.n, like.k)
        for t in self.terms:
            out = out + t
        return out


def mass_decomposition(v: KVector) -> MassDecomposition:
    """Optimal decomposition into simple terms at oracle degrees."""
    n, k = v.n, v.k
    if k not in (1, 2, n - 2, n - 1, n):
        raise ValueError(f"no exact mass oracle at (n={n}, k={k})")
    eu = euclid_norm(v)
    if eu == 0.0:
        return MassDecomposition([], 0.0)
    if k in (1, n - 1, n):
        return MassDecomposition([v.copy()], eu)
    if k == 2:
        nf = normal_form_2(v)
        terms = []
        total = 0.0
        for i, lam in enumerate(nf.lambdas):
            if lam <= _EIGHT_ZERO * (1 + eu):
                continue
            pair = KVector.from_vectors(nf.frame[:, 2 * i], nf.frame[:, 2 * i + 1])
            terms.append(float(lam) * pair)
            total += float(lam)
        return MassDecomposition(terms, total)
    # k == n - 2: star is a mass isometry mapping simples to simples
    dec = mass_decomposition(star_alg(v))
    sign = 1.0  # (-1)^{2(n-2)} = +1
    terms = [sign * star_alg(t) for t in dec.terms]
    return MassDecomposition(terms, dec.total)


# ---------------------------------------------------------------------------
# coefficient expressions ("e12+2e34")
# ---------------------------------------------------------------------------

_TERM_RE = re.compile(
    r"([+-]?)\s*(\d+(?:\.\d*)?|\.\d+)?\s*\*?\s*e(\d+)", re.IGNORECASE)


def parse_kvector(expr: str, n: int) -> KVector:
    """Parse "e12+2e34"-style sums of scaled basis terms (axes 1-based,
    one digit per axis, so n <= 9)."""
    stripped = re.sub(r"\s+", "", expr)
    if not stripped:
        raise ValueError("empty k-vector expression")
    pos = 0
    terms = []
    for m in _TERM_RE.finditer(stripped):
        if m.start() != pos:
            raise ValueError(f"cannot parse {expr!r} near {stripped[pos:]!r}")
        sign, coeff, digits = m.groups()
        c = float(coeff) if coeff else 1.0
        if sign == "-":
            c = -c
        axes = tuple(int(d) - 1 for d in digits)
        if any(a < 0 or a >= n for a in axes):
            raise ValueError(f"axis out of range in {expr!r} for n={n}")
        if len(set(axes)) != len(axes) or list(axes) != sorted(axes):
            raise ValueError(f"axes must be strictly increasing in {expr!r}")
        terms.append((axes, c))
        pos = m.end()
    if pos != len(stripped):
        raise ValueError(f"cannot parse {expr!r} near {stripped[pos:]!r}")
    k = len(terms[0][0])
    if any(len(axes) != k for axes, _ in terms):
        raise ValueError(f"mixed degrees in {expr!r}")
    v = KVector.zero(n, k)
    for axes, c in terms:
        v.coeffs[_index_of(n, k)[axes]] += c
    return v
