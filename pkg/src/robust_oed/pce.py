"""Polynomial chaos expansions fitted by probabilistic collocation."""
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.stats import qmc

from .polynomials import HERMITE, JACOBI, LEGENDRE, MultiIndexBasis, eval_basis, gauss_rule

TENSOR = "tensor"
LOW_DISCREPANCY = "low_discrepancy"

# largest acceptable condition number of the weighted design matrix
MAX_CONDITION = 1e12


class CollocationError(RuntimeError):
    """Model evaluation failed at a collocation node."""

    def __init__(self, xi, cause):
        super().__init__(f"evaluation failed at xi={np.array2string(np.asarray(xi))}: {cause}")
        self.xi = np.asarray(xi)


@dataclass(frozen=True)
class CollocationPlan:
    basis: MultiIndexBasis
    nodes: np.ndarray
    weights: np.ndarray
    design_matrix: np.ndarray
    strategy: str
    projector: np.ndarray = field(repr=False)

    @property
    def n_c(self):
        return self.nodes.shape[0]


@dataclass(frozen=True)
class PceExpansion:
    coeffs: np.ndarray
    basis: MultiIndexBasis

    def mean(self):
        return float(self.coeffs[0])

    def variance(self):
        c = self.coeffs[1:]
        return float(np.sum(c * c * self.basis.sq_norms[1:]))

    def std(self):
        return np.sqrt(self.variance())

    def __call__(self, xi):
        return eval_basis(self.basis, xi) @ self.coeffs

    def to_dict(self):
        return {"basis_descriptor": self.basis.descriptor(), "coeffs": [float(c) for c in self.coeffs]}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        basis = MultiIndexBasis.from_descriptor(d["basis_descriptor"])
        coeffs = np.asarray(d["coeffs"], dtype=float)
        if coeffs.shape != (len(basis),):
            raise ValueError(f"expected {len(basis)} coefficients, got {coeffs.shape}")
        return cls(coeffs, basis)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def mean(expansion):
    return expansion.mean()


def variance(expansion):
    return expansion.variance()


def moments_from_coeffs(coeffs, sq_norms):
    """Mean and variance for a stack of coefficient vectors (last axis = basis)."""
    coeffs = np.asarray(coeffs)
    return coeffs[..., 0], np.sum(coeffs[..., 1:] ** 2 * sq_norms[1:], axis=-1)


def _inverse_cdf(family, u):
    if family.kind == LEGENDRE:
        return 2.0 * u - 1.0
    if family.kind == JACOBI:
        # weight (1-x)^a (1+x)^b is Beta(b+1, a+1) on [-1, 1]
        return 2.0 * stats.beta.ppf(u, family.b + 1.0, family.a + 1.0) - 1.0
    if family.kind == HERMITE:
        return stats.norm.ppf(u)
    raise ValueError(family.kind)


def _tensor_grid(basis, order):
    rules = [gauss_rule(f, order) for f in basis.families]
    nodes = np.array(np.meshgrid(*[r.nodes for r in rules], indexing="ij"))
    weights = np.ones([order] * basis.n_xi)
    for j, r in enumerate(rules):
        shape = [1] * basis.n_xi
        shape[j] = order
        weights = weights * r.weights.reshape(shape)
    return nodes.reshape(basis.n_xi, -1).T, weights.ravel()


def make_plan(basis, n_c=None, strategy=TENSOR):
    """Collocation nodes, weights and design matrix for ``basis``.

    ``TENSOR`` uses the tensor grid of Gauss nodes with ``m + 1`` points per
    dimension unless ``n_c`` is given as a perfect ``n_xi``-th power.
    ``LOW_DISCREPANCY`` uses the first ``n_c`` points of an unscrambled
    Halton sequence (origin skipped) pushed through the inverse CDFs.
    """
    n_terms = len(basis)
    if strategy == TENSOR:
        if n_c is None:
            order = basis.degree + 1
        else:
            order = int(round(n_c ** (1.0 / basis.n_xi)))
            if order ** basis.n_xi != n_c:
                raise ValueError(f"tensor plan needs n_c = q**{basis.n_xi}, got {n_c}")
        if order ** basis.n_xi < n_terms:
            raise ValueError(f"n_c={order ** basis.n_xi} is below the number of basis terms {n_terms}")
        nodes, weights = _tensor_grid(basis, order)
    elif strategy == LOW_DISCREPANCY:
        if n_c is None:
            n_c = 2 * n_terms
        if n_c < n_terms:
            raise ValueError(f"n_c={n_c} is below the number of basis terms {n_terms}")
        u = qmc.Halton(d=basis.n_xi, scramble=False).random(n_c + 1)[1:]
        nodes = np.column_stack([_inverse_cdf(f, u[:, j]) for j, f in enumerate(basis.families)])
        weights = np.full(n_c, 1.0 / n_c)
    else:
        raise ValueError(f"unknown collocation strategy {strategy!r}")

    A = eval_basis(basis, nodes)
    sw = np.sqrt(weights)[:, None]
    Aw = sw * A
    if np.linalg.cond(Aw) > MAX_CONDITION:
        raise ValueError("collocation design matrix is rank deficient")
    projector = np.linalg.pinv(Aw) * sw.T
    return CollocationPlan(basis, nodes, weights, A, strategy, projector)


def fit_coeffs(plan, values):
    """Weighted least-squares coefficients; ``values`` is ``(n_c,)`` or ``(n_c, Q)``."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != plan.n_c:
        raise ValueError(f"expected {plan.n_c} values, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise ValueError("collocation values must be finite")
    return plan.projector @ values


def fit(plan, values):
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("fit expects one value per node; use fit_coeffs for several outputs")
    return PceExpansion(fit_coeffs(plan, values), plan.basis)


def propagate(plan, evaluator, vectorized=False):
    """Run ``evaluator`` at every node and fit one expansion per output.

    With ``vectorized=True`` the evaluator receives the full ``(n_c, n_xi)``
    node array and must return ``(n_c, Q)``; otherwise it is called once per
    node in plan order.
    """
    if vectorized:
        try:
            values = np.asarray(evaluator(plan.nodes), dtype=float)
        except CollocationError:
            raise
        except Exception as exc:
            raise CollocationError(plan.nodes, exc) from exc
        values = values.reshape(plan.n_c, -1)
        bad = ~np.all(np.isfinite(values), axis=1)
        if bad.any():
            raise CollocationError(plan.nodes[np.argmax(bad)], "non-finite output")
    else:
        rows = []
        for xi in plan.nodes:
            try:
                v = np.atleast_1d(np.asarray(evaluator(xi), dtype=float))
            except Exception as exc:
                raise CollocationError(xi, exc) from exc
            if not np.all(np.isfinite(v)):
                raise CollocationError(xi, "non-finite output")
            rows.append(v)
        values = np.array(rows)
    coeffs = fit_coeffs(plan, values)
    return [PceExpansion(coeffs[:, q], plan.basis) for q in range(coeffs.shape[1])]
