"""Robust optimal experiment design with chance constraints.

The objective is built from polynomial-chaos moments of an optimality
criterion of the Fisher information matrix; chance constraints are replaced
by their Cantelli-Chebyshev mean/variance surrogates and handled by an exact
penalty inside a multi-start Nelder-Mead search over the input levels.
"""
import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import minimize

from .dynamics import DEFAULT_STEP, PiecewiseConstantInput, integrate
from .linalg import min_eigenvalue
from .models import to_standard
from .pce import TENSOR, make_plan, moments_from_coeffs
from .polynomials import build_basis

E_OPT = "E"
A_OPT = "A"
D_OPT = "D"
CRITERIA = (E_OPT, A_OPT, D_OPT)


def criterion_value(F, criterion=E_OPT):
    """Scalar information measure of ``F``; larger is better for every criterion.

    E: smallest eigenvalue. A: ``-trace(F^-1)``. D: ``log det F``.
    A and D return ``-inf`` for a singular matrix.
    """
    F = np.asarray(F, dtype=float)
    if criterion == E_OPT:
        return min_eigenvalue(F)
    if criterion == A_OPT:
        try:
            return -float(np.trace(np.linalg.inv(F)))
        except np.linalg.LinAlgError:
            return -np.inf
    if criterion == D_OPT:
        sign, logdet = np.linalg.slogdet(F)
        return float(logdet) if sign > 0 else -np.inf
    raise ValueError(f"unknown criterion {criterion!r}")


def cantelli_bound(var, alpha):
    """Upper bound ``var / (var + alpha^2)`` on ``Pr[psi - E psi >= alpha]``."""
    if var < 0 or alpha < 0:
        raise ValueError("variance and deviation must be non-negative")
    if var == 0 and alpha == 0:
        return 1.0
    return var / (var + alpha * alpha)


@dataclass(frozen=True)
class ChanceConstraint:
    """``Pr[b * (c @ x(t)) >= x_max] <= beta`` for every ``t`` in ``grid``."""

    c: np.ndarray
    b: float
    x_max: float
    beta: float
    grid: np.ndarray
    name: str = ""

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"risk level beta must lie in (0, 1), got {self.beta}")
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))

    @property
    def back_off(self):
        return np.sqrt((1.0 - self.beta) / self.beta)


def surrogate_margin(mean, var, cc):
    """``x_max - b*mean - |b| sqrt(var) sqrt((1 - beta)/beta)``; feasible iff >= 0."""
    if not 0.0 < cc.beta < 1.0:
        raise ValueError(f"risk level beta must lie in (0, 1), got {cc.beta}")
    var = np.maximum(np.asarray(var, dtype=float), 0.0)
    return cc.x_max - cc.b * np.asarray(mean) - np.sqrt(cc.b * cc.b * var) * cc.back_off


@dataclass
class SolverOptions:
    """Nelder-Mead settings. ``xatol`` is absolute in input units; ``fatol`` is
    relative to the median objective magnitude over the screened start points."""

    max_iter: int = 300
    restarts: int = 3
    n_random: int = 4
    seed: int = 0
    penalty: float = None
    xatol: float = 1e-3
    fatol: float = 1e-6
    simplex_scale: float = 0.25


@dataclass
class DesignProblem:
    model: object
    uset: object
    theta_nominal: np.ndarray
    template: PiecewiseConstantInput
    x0_nominal: np.ndarray = None
    degree: int = 4
    criterion: str = E_OPT
    w: float = 0.0
    constraints: list = field(default_factory=list)
    solver: SolverOptions = field(default_factory=SolverOptions)
    step: float = DEFAULT_STEP
    collocation: str = TENSOR

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("variance weight w must be non-negative")
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        self.theta_nominal = np.asarray(self.theta_nominal, dtype=float)
        if self.theta_nominal.shape != (self.model.n_theta,):
            raise ValueError("theta_nominal has the wrong length")
        if self.x0_nominal is None:
            self.x0_nominal = self.model.x0[:self.model.n_base]
        self.x0_nominal = np.asarray(self.x0_nominal, dtype=float)
        for cc in self.constraints:
            if cc.c.shape != (self.model.n_x,):
                raise ValueError(f"constraint {cc.name!r}: weights need {self.model.n_x} entries")
            if cc.grid.min() < 0 or cc.grid.max() > self.template.t_f + 1e-12:
                raise ValueError(f"constraint {cc.name!r}: grid outside [0, t_f]")


@dataclass
class ObjectiveValue:
    J: float
    e_phi: float
    var_phi: float
    means: list
    variances: list
    margins: list

    @property
    def worst_margin(self):
        if not self.margins:
            return np.inf
        return min(float(np.min(m)) for m in self.margins)


class RobustObjective:
    """Evaluates ``-E[Phi] + w Var[Phi]`` and the constraint moments for input levels.

    The collocation plan and node-to-parameter map are built once.
    """

    def __init__(self, problem):
        self.problem = p = problem
        families, self.mapping = to_standard(p.uset, p.theta_nominal, p.x0_nominal)
        if families:
            self.basis = build_basis(families, p.degree)
            self.plan = make_plan(self.basis, strategy=p.collocation)
            nodes = self.plan.nodes
        else:
            self.basis = self.plan = None
            nodes = np.zeros((1, 0))
        self.theta, self.x0 = self.mapping(nodes) if families else self.mapping(np.zeros((1, 0)))
        self.x0 = p.model.initial_state(self.x0)
        times = [np.array([0.0, p.template.t_f])] + [cc.grid for cc in p.constraints]
        self.grid = np.unique(np.concatenate(times))
        self.cidx = [np.searchsorted(self.grid, cc.grid) for cc in p.constraints]

    def node_values(self, levels):
        """Criterion at ``t_f`` and constrained quantities, one row per node."""
        p = self.problem
        inp = PiecewiseConstantInput(levels, p.template.t_f, p.template.bounds)
        tr = integrate(p.model, inp, self.theta, self.x0, self.grid, step=p.step)
        phi = np.array([criterion_value(F, p.criterion) for F in tr.F[-1]])
        cols = [phi[:, None]]
        for cc, idx in zip(p.constraints, self.cidx):
            cols.append((tr.x[idx] @ cc.c).T)
        return np.concatenate(cols, axis=1)

    def __call__(self, levels):
        p = self.problem
        V = self.node_values(levels)
        if not np.all(np.isfinite(V[:, 0])):
            return ObjectiveValue(np.inf, -np.inf, np.inf, [], [], [])
        if self.plan is None:
            mu, var = V[0], np.zeros(V.shape[1])
        else:
            mu, var = moments_from_coeffs((self.plan.projector @ V).T, self.basis.sq_norms)
        means, variances, margins = [], [], []
        k = 1
        for cc in p.constraints:
            n = len(cc.grid)
            means.append(mu[k:k + n])
            variances.append(var[k:k + n])
            margins.append(surrogate_margin(mu[k:k + n], var[k:k + n], cc))
            k += n
        e_phi, var_phi = float(mu[0]), float(var[0])
        return ObjectiveValue(-e_phi + p.w * var_phi, e_phi, var_phi, means, variances, margins)


@dataclass
class MomentTable:
    """PCE means and variances on a time grid; arrays are ``(T, n)``."""

    t: np.ndarray
    state_mean: np.ndarray
    state_var: np.ndarray
    output_mean: np.ndarray
    output_var: np.ndarray
    margins: list


def propagate_moments(model, uset, theta_nominal, inp, grid, x0_nominal=None, degree=4,
                      constraints=(), step=DEFAULT_STEP, collocation=TENSOR):
    """PCE mean/variance of the base states, outputs and constraint margins over ``grid``."""
    grid = np.asarray(grid, dtype=float)
    x0_nominal = model.x0[:model.n_base] if x0_nominal is None else np.asarray(x0_nominal, float)
    families, mapping = to_standard(uset, theta_nominal, x0_nominal)
    nodes = np.zeros((1, 0))
    if families:
        basis = build_basis(families, degree)
        plan = make_plan(basis, strategy=collocation)
        nodes = plan.nodes
    theta, x0 = mapping(nodes)
    tr = integrate(model, inp, theta, model.initial_state(x0), grid, step=step, sensitivities=False)
    nb = model.n_base
    cols = [tr.x[:, :, :nb], tr.y] + [(tr.x @ cc.c)[:, :, None] for cc in constraints]
    V = np.concatenate(cols, axis=2)  # (T, nodes, q)
    if families:
        C = np.einsum("kn,tnq->tqk", plan.projector, V)
        mu, var = moments_from_coeffs(C, basis.sq_norms)
    else:
        mu, var = V[:, 0], np.zeros_like(V[:, 0])
    ny = model.n_y
    margins = [surrogate_margin(mu[:, nb + ny + i], var[:, nb + ny + i], cc)
               for i, cc in enumerate(constraints)]
    return MomentTable(grid, mu[:, :nb], var[:, :nb], mu[:, nb:nb + ny], var[:, nb:nb + ny], margins)


def robust_objective(problem, levels):
    """``(J, E[Phi], Var[Phi], moment table)`` for one set of input levels."""
    ov = RobustObjective(problem)(levels)
    table = [(m, v) for m, v in zip(ov.means, ov.variances)]
    return ov.J, ov.e_phi, ov.var_phi, table


@dataclass
class DesignResult:
    u_star: PiecewiseConstantInput
    obj: float
    e_phi: float
    var_phi: float
    constraint_margins: list
    constraint_grids: list
    iterations: int
    feasible: bool
    constraint_names: list = field(default_factory=list)
    restarts: list = field(default_factory=list)

    def to_dict(self):
        return {
            "levels": [float(v) for v in self.u_star.levels],
            "t_f": float(self.u_star.t_f),
            "bounds": [float(b) for b in self.u_star.bounds],
            "objective": float(self.obj),
            "e_phi": float(self.e_phi),
            "var_phi": float(self.var_phi),
            "feasible": bool(self.feasible),
            "iterations": int(self.iterations),
            "constraints": [
                {"name": name, "t": [float(t) for t in g], "margin": [float(m) for m in marg],
                 "min_margin": float(np.min(marg))}
                for name, g, marg in zip(self.constraint_names, self.constraint_grids,
                                         self.constraint_margins)
            ],
            "restarts": self.restarts,
        }

    def to_json(self, path=None):
        s = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s + "\n")
        return s


def _start_points(lo, hi, n, n_random, rng):
    pts = [0.5 * (lo + hi)]
    pts += [np.where(np.array(c, dtype=bool), hi, lo) for c in product((0, 1), repeat=n)]
    pts += [lo + (hi - lo) * rng.random(n) for _ in range(n_random)]
    return pts


def solve(problem, callback=None):
    """Multi-start Nelder-Mead with clipping to the input box and exact penalties."""
    tmpl = problem.template
    if tmpl.t_f <= 0:
        raise ValueError("zero-length horizon")
    opts = problem.solver
    n = tmpl.n_seg
    lo, hi = (np.full(n, float(b)) for b in tmpl.bounds)
    objective = RobustObjective(problem)
    rng = np.random.default_rng(opts.seed)
    starts = _start_points(lo, hi, n, opts.n_random, rng)

    cache = {}

    def evaluate(v):
        v = np.clip(v, lo, hi)
        key = v.tobytes()
        if key not in cache:
            cache[key] = objective(v)
        return cache[key]

    screened = [evaluate(s) for s in starts]
    J_typ = np.median([abs(ov.J) for ov in screened if np.isfinite(ov.J)] or [1.0])
    rho = opts.penalty if opts.penalty is not None else 1e3 * max(J_typ, 1e-12)

    def penalized(ov):
        if not np.isfinite(ov.J):
            return np.inf
        viol = sum(float(np.sum(np.maximum(0.0, -m))) for m in ov.margins)
        return ov.J + rho * viol

    order = np.argsort([penalized(ov) for ov in screened], kind="stable")
    best = None
    history = []
    nfev = len(starts)
    for r in order[:opts.restarts]:
        x0 = np.clip(starts[r], lo, hi)
        simplex = [x0]
        for j in range(n):
            e = x0.copy()
            step = opts.simplex_scale * (hi[j] - lo[j])
            e[j] = e[j] + step if e[j] + step <= hi[j] else e[j] - step
            simplex.append(e)
        res = minimize(lambda v: penalized(evaluate(v)), x0, method="Nelder-Mead",
                       bounds=list(zip(lo, hi)),
                       options={"initial_simplex": np.array(simplex), "maxiter": opts.max_iter,
                                "xatol": opts.xatol, "fatol": opts.fatol * max(J_typ, 1e-12)})
        nfev += res.nfev
        v = np.clip(res.x, lo, hi)
        ov = evaluate(v)
        feasible = ov.worst_margin >= -1e-9
        history.append({"start": [float(s) for s in starts[r]], "levels": [float(x) for x in v],
                        "objective": float(ov.J), "feasible": bool(feasible)})
        if callback is not None:
            callback(history[-1])
        cand = (not feasible, penalized(ov) if not feasible else ov.J, v, ov)
        if best is None or cand[:2] < best[:2]:
            best = cand
    if best is None or not np.isfinite(best[1]):
        raise RuntimeError("all restarts diverged")

    _, _, v, ov = best
    return DesignResult(
        u_star=PiecewiseConstantInput(v, tmpl.t_f, tmpl.bounds),
        obj=ov.J, e_phi=ov.e_phi, var_phi=ov.var_phi,
        constraint_margins=ov.margins, constraint_grids=[cc.grid for cc in problem.constraints],
        iterations=nfev, feasible=ov.worst_margin >= -1e-9,
        constraint_names=[cc.name or f"c{i}" for i, cc in enumerate(problem.constraints)],
        restarts=history,
    )
