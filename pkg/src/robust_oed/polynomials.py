"""Askey-scheme orthogonal polynomials, Gauss rules and tensorized bases.

Conventions
-----------
Polynomials are kept in their *standard* (not unit-norm) form:

* Legendre ``P_n`` with ``P_n(1) = 1``; weight is the uniform PDF on [-1, 1].
* Jacobi ``P_n^{(a, b)}`` with ``P_n(1) = binom(n + a, n)``; weight is
  proportional to ``(1 - x)^a (1 + x)^b`` on [-1, 1].
* Hermite: probabilists' ``He_n`` (leading coefficient 1); weight is the
  standard normal PDF.

All inner products are taken against the *probability* measure, so the
constant polynomial has squared norm 1 and quadrature weights sum to 1.
"""
from dataclasses import dataclass, field
from itertools import product
from math import comb

import numpy as np

from .linalg import jacobi_eigh

JACOBI = "jacobi"
LEGENDRE = "legendre"
HERMITE = "hermite"


@dataclass(frozen=True)
class PolyFamily:
    """One univariate orthogonal family.

    ``a`` and ``b`` are only meaningful for Jacobi. Legendre is treated as
    Jacobi(0, 0) throughout.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in (JACOBI, LEGENDRE, HERMITE):
            raise ValueError(f"unknown polynomial family {self.kind!r}")
        if self.kind == JACOBI and (self.a <= -1.0 or self.b <= -1.0):
            raise ValueError(f"Jacobi parameters must exceed -1, got a={self.a}, b={self.b}")

    @classmethod
    def jacobi(cls, a, b):
        return cls(JACOBI, float(a), float(b))

    @classmethod
    def legendre(cls):
        return cls(LEGENDRE)

    @classmethod
    def hermite(cls):
        return cls(HERMITE)

    @property
    def support(self):
        if self.kind == HERMITE:
            return (-np.inf, np.inf)
        return (-1.0, 1.0)

    def _ab(self):
        if self.kind == LEGENDRE:
            return 0.0, 0.0
        return self.a, self.b

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == JACOBI:
            d.update(a=self.a, b=self.b)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d.get("a", 0.0)), float(d.get("b", 0.0)))

    def recurrence(self, n):
        """Monic recurrence coefficients ``(alpha[0:n], beta[0:n])``.

        ``p_{k+1}(x) = (x - alpha_k) p_k(x) - beta_k p_{k-1}(x)`` for the
        probability-normalized weight (``beta_0 = 1``).
        """
        k = np.arange(n, dtype=float)
        if self.kind == HERMITE:
            beta = k.copy()
            beta[0] = 1.0
            return np.zeros(n), beta

        a, b = self._ab()
        alpha = np.empty(n)
        beta = np.empty(n)
        s = a + b
        for i in range(n):
            if i == 0:
                alpha[0] = (b - a) / (s + 2.0)
                beta[0] = 1.0
                continue
            t = 2.0 * i + s
            alpha[i] = (b * b - a * a) / (t * (t + 2.0))
            if i == 1:
                # (1 + a + b) cancels; keeps a + b = -1 well-defined
                beta[1] = 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + s) ** 2 * (3.0 + s))
            else:
                beta[i] = 4.0 * i * (i + a) * (i + b) * (i + s) / (t * t * (t + 1.0) * (t - 1.0))
        return alpha, beta

    def sq_norm(self, n):
        """Exact ``E[p_n(xi)^2]`` for the standard (non-monic) polynomial."""
        alpha, beta = self.recurrence(n + 1)
        monic = float(np.prod(beta[1:n + 1]))
        return monic * self.leading_coefficient(n) ** 2

    def leading_coefficient(self, n):
        if self.kind == HERMITE:
            return 1.0
        a, b = self._ab()
        # k_n = Gamma(2n+a+b+1) / (2^n n! Gamma(n+a+b+1))
        from scipy.special import gammaln

        return float(np.exp(gammaln(2 * n + a + b + 1) - n * np.log(2.0)
                            - gammaln(n + 1) - gammaln(n + a + b + 1)))


def eval_poly(family, degree, x):
    """Evaluate the standard degree-``degree`` polynomial of ``family`` at ``x``.

    Works elementwise on arrays.
    """
    if degree < 0:
        raise ValueError(f"degree must be non-negative, got {degree}")
    return eval_all(family, degree, x)[degree]


def eval_all(family, degree, x):
    """Values of degrees ``0..degree`` stacked along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((degree + 1,) + x.shape)
    out[0] = 1.0
    if degree == 0:
        return out

    if family.kind == HERMITE:
        out[1] = x
        for n in range(1, degree):
            out[n + 1] = x * out[n] - n * out[n - 1]
        return out

    a, b = family._ab()
    s = a + b
    out[1] = (a + 1.0) + 0.5 * (s + 2.0) * (x - 1.0)
    for n in range(2, degree + 1):
        t = 2.0 * n + s
        c1 = 2.0 * n * (n + s) * (t - 2.0)
        c2 = (t - 1.0) * (t * (t - 2.0) * x + a * a - b * b)
        c3 = 2.0 * (n + a - 1.0) * (n + b - 1.0) * t
        out[n] = (c2 * out[n - 1] - c3 * out[n - 2]) / c1
    return out


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f):
        return float(np.dot(self.weights, f(self.nodes)))


def gauss_rule(family, n):
    """n-point Gauss rule for the probability measure of ``family`` (Golub-Welsch)."""
    if n < 1:
        raise ValueError(f"number of nodes must be >= 1, got {n}")
    alpha, beta = family.recurrence(n)
    J = np.diag(alpha)
    if n > 1:
        off = np.sqrt(beta[1:])
        J += np.diag(off, 1) + np.diag(off, -1)
    nodes, vecs = jacobi_eigh(J)
    weights = vecs[0, :] ** 2
    weights = weights / weights.sum()
    return QuadratureRule(nodes, weights)


def total_degree_indices(n_xi, m):
    """Multi-indices with total degree <= m in graded order.

    Within one total degree, indices are sorted in descending lexicographic
    order, so for two dimensions degree 1 gives ``(1, 0), (0, 1)``.
    """
    out = []
    for d in range(m + 1):
        level = [idx for idx in product(range(d + 1), repeat=n_xi) if sum(idx) == d]
        level.sort(reverse=True)
        out.extend(level)
    return out


@dataclass(frozen=True)
class MultiIndexBasis:
    families: tuple
    degree: int
    indices: tuple
    sq_norms: np.ndarray = field(repr=False)

    @property
    def n_xi(self):
        return len(self.families)

    def __len__(self):
        return len(self.indices)

    def __call__(self, xi):
        return eval_basis(self, xi)

    def descriptor(self):
        return {
            "families": [f.to_dict() for f in self.families],
            "degree": self.degree,
        }

    @classmethod
    def from_descriptor(cls, d):
        return build_basis([PolyFamily.from_dict(f) for f in d["families"]], d["degree"])


def build_basis(families, m):
    families = tuple(families)
    if len(families) < 1:
        raise ValueError("need at least one random dimension")
    if m < 0:
        raise ValueError(f"total degree must be non-negative, got {m}")
    indices = tuple(total_degree_indices(len(families), m))
    expected = comb(len(families) + m, m)
    assert len(indices) == expected

    # squared norms from a tensor Gauss rule, exact for degree 2m integrands
    n_q = m + 1
    rules = [gauss_rule(f, n_q) for f in families]
    grids = np.meshgrid(*[r.nodes for r in rules], indexing="ij")
    wgrid = np.ones_like(grids[0])
    for g, r in zip(range(len(rules)), rules):
        shape = [1] * len(rules)
        shape[g] = n_q
        wgrid = wgrid * r.weights.reshape(shape)
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    basis = MultiIndexBasis(families, m, indices, np.ones(len(indices)))
    V = eval_basis(basis, pts)
    sq = np.einsum("n,nk->k", wgrid.ravel(), V * V)
    return MultiIndexBasis(families, m, indices, sq)


def eval_basis(basis, xi):
    """Evaluate all basis functions at ``xi`` (shape ``(n_xi,)`` or ``(N, n_xi)``)."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    if pts.shape[-1] != basis.n_xi:
        raise ValueError(f"expected {basis.n_xi} random dimensions, got {pts.shape[-1]}")
    per_dim = [eval_all(f, basis.degree, pts[:, j]) for j, f in enumerate(basis.families)]
    out = np.ones((pts.shape[0], len(basis.indices)))
    for k, idx in enumerate(basis.indices):
        for j, d in enumerate(idx):
            if d:
                out[:, k] *= per_dim[j][d]
    return out[0] if single else out
