"""Monte Carlo validation of a designed input.

Each run draws its own "true" parameters, simulates the system under the
input, adds measurement noise and re-estimates the parameters by weighted
least squares. Runs use seeds derived from ``(master_seed, run_index)`` so
two designs validated with the same seed see identical realizations.
"""
import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dynamics import DEFAULT_STEP, integrate

GAUSS_NEWTON = "gauss-newton"
NELDER_MEAD = "nelder-mead"


def run_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass
class McConfig:
    n_runs: int = 1000
    seed: int = 0
    meas_grid: np.ndarray = None
    check_grid: np.ndarray = None
    probe_time: float = None
    noise: object = None
    noise_scale: float = 1.0
    init: str = "mean"
    max_iter: int = 60
    estimator: str = GAUSS_NEWTON
    step: float = DEFAULT_STEP
    hist_bins: int = 30
    threads: int = 1

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.init not in ("mean", "true"):
            raise ValueError(f"unknown initial-guess policy {self.init!r}")
        if self.estimator not in (GAUSS_NEWTON, NELDER_MEAD):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    def grids(self, t_f):
        meas = np.arange(1.0, t_f + 1e-9, 1.0) if self.meas_grid is None else np.asarray(self.meas_grid, float)
        check = np.arange(0.0, t_f + 1e-9, 0.25) if self.check_grid is None else np.asarray(self.check_grid, float)
        probe = t_f if self.probe_time is None else float(self.probe_time)
        if meas.min() < 0 or meas.max() > t_f + 1e-12 or check.max() > t_f + 1e-12:
            raise ValueError("measurement/check grid outside [0, t_f]")
        return meas, check, probe


@dataclass
class WlsResult:
    theta: np.ndarray
    cost: float
    converged: bool
    iterations: int


def _gauss_newton(model, inp, grid, Y, W, theta0, x0, lo, hi, max_iter, step, xtol=1e-10):
    """Box-projected Levenberg-Marquardt on a batch of independent fits.

    ``Y`` and ``W`` have shape ``(T, B, n_y)`` (``grid`` excludes ``t = 0``
    unless given). Returns ``(theta, cost, converged, iterations)`` per run.
    """
    B, p = theta0.shape
    full_grid = np.unique(np.concatenate([[0.0], grid]))
    sl = np.searchsorted(full_grid, grid)

    def evaluate(theta, idx):
        tr = integrate(model, inp, theta, x0[idx], full_grid, step=step)
        y = tr.y[sl]
        xs = tr.x[sl]
        Hx = model.jac_h(xs.reshape(-1, model.n_x)).reshape(xs.shape[:2] + (model.n_y, model.n_x))
        G = Hx @ tr.S[sl]
        e = Y[:, idx] - y
        cost = np.sum(W[:, idx] * e * e, axis=(0, 2))
        return cost, e, G

    theta = np.clip(theta0.astype(float), lo, hi)
    all_idx = np.arange(B)
    cost, e, G = evaluate(theta, all_idx)
    mu = np.full(B, 1e-3)
    converged = np.zeros(B, dtype=bool)
    done = ~np.isfinite(cost)
    iters = np.zeros(B, dtype=int)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        Wa = W[:, act]
        A = np.einsum("tbyp,tby,tbyq->bpq", G[:, act], Wa, G[:, act])
        g = np.einsum("tbyp,tby,tby->bp", G[:, act], Wa, e[:, act])
        D = np.einsum("bpp->bp", A)
        D = np.where(D > 0, D, 1.0)
        # freeze components pressed against a bound by the descent direction
        th_a = theta[act]
        frozen = ((th_a <= lo) & (g < 0)) | ((th_a >= hi) & (g > 0))
        free = (~frozen).astype(float)
        A = A * free[:, :, None] * free[:, None, :] + np.einsum("bp,pq->bpq", 1.0 - free, np.eye(p))
        g = g * free
        lhs = A + mu[act, None, None] * np.einsum("bp,pq->bpq", D, np.eye(p))
        delta = np.linalg.solve(lhs, g[..., None])[..., 0]
        trial = np.clip(theta[act] + delta, lo, hi)
        moved = np.abs(trial - theta[act]) <= xtol * np.maximum(np.abs(theta[act]), 1e-300)
        small = np.all(moved, axis=1)
        c_new, e_new, G_new = evaluate(trial, act)
        iters[act] += 1
        accept = np.isfinite(c_new) & (c_new <= cost[act])
        a_idx = act[accept]
        theta[a_idx] = trial[accept]
        cost[a_idx] = c_new[accept]
        e[:, a_idx] = e_new[:, accept]
        G[:, a_idx] = G_new[:, accept]
        mu[a_idx] = np.maximum(mu[a_idx] / 3.0, 1e-12)
        r_idx = act[~accept]
        mu[r_idx] *= 4.0
        stop = small | (mu[act] > 1e10)
        converged[act[stop]] = True
        done[act[stop]] = True
    return theta, cost, converged, iters


def wls_estimate(model, inp, t, y_meas, theta_init, bounds=None, x0=None, sigma=None,
                 method=GAUSS_NEWTON, max_iter=60, step=DEFAULT_STEP):
    """Weighted least-squares parameter estimate from one data set.

    ``y_meas`` has shape ``(T, n_y)`` at times ``t``; ``sigma`` defaults to
    the model's noise policy applied to the data. ``bounds`` is a pair of
    arrays (``None`` means unbounded).
    """
    t = np.asarray(t, dtype=float)
    y_meas = np.asarray(y_meas, dtype=float)
    theta_init = np.asarray(theta_init, dtype=float)
    p = model.n_theta
    lo, hi = (np.full(p, -np.inf), np.full(p, np.inf)) if bounds is None else map(np.asarray, bounds)
    if sigma is None:
        sigma = model.noise.sigma(y_meas)
    W = 1.0 / np.asarray(sigma, dtype=float) ** 2
    x0 = model.x0 if x0 is None else np.asarray(x0, dtype=float)
    x0 = model.initial_state(x0)
    order = np.argsort(t, kind="stable")
    t, y_meas, W = t[order], y_meas[order], W[order]

    if method == GAUSS_NEWTON:
        th, cost, conv, it = _gauss_newton(model, inp, t, y_meas[:, None], W[:, None],
                                           theta_init[None], x0[None], lo, hi, max_iter, step)
        return WlsResult(th[0], float(cost[0]), bool(conv[0]), int(it[0]))
    if method != NELDER_MEAD:
        raise ValueError(f"unknown estimator {method!r}")

    grid = np.unique(np.concatenate([[0.0], t]))
    sl = np.searchsorted(grid, t)

    def cost(v):
        v = np.clip(v, lo, hi)
        tr = integrate(model, inp, v, x0, grid, step=step, sensitivities=False)
        return float(np.sum(W * (y_meas - tr.y[sl, 0]) ** 2))

    c0 = cost(theta_init)
    if not np.isfinite(c0):
        raise ValueError("non-finite WLS objective at the initial guess")
    simplex = [theta_init]
    for j in range(p):
        e = theta_init.copy()
        e[j] += 0.05 * (abs(e[j]) if e[j] != 0 else 1.0)
        simplex.append(e)
    res = minimize(cost, theta_init, method="Nelder-Mead",
                   options={"initial_simplex": np.array(simplex), "maxiter": max_iter * 20,
                            "xatol": 1e-12, "fatol": 1e-14})
    return WlsResult(np.clip(res.x, lo, hi), float(res.fun), bool(res.success), int(res.nit))


@dataclass
class McReport:
    param_names: list
    theta_true: np.ndarray
    theta_hat: np.ndarray
    converged: np.ndarray
    rel_err: np.ndarray
    constrained_min: np.ndarray
    satisfied: np.ndarray
    probe_values: np.ndarray
    probe_time: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    constraint: object = None

    @property
    def n_runs(self):
        return len(self.theta_true)

    @property
    def n_diverged(self):
        return int(np.sum(~self.converged))

    @property
    def avg_rel_err(self):
        ok = self.converged
        return self.rel_err[ok].mean(axis=0) if ok.any() else np.full(self.rel_err.shape[1], np.nan)

    @property
    def max_rel_err(self):
        ok = self.converged
        return self.rel_err[ok].max(axis=0) if ok.any() else np.full(self.rel_err.shape[1], np.nan)

    @property
    def satisfaction(self):
        return float(np.mean(self.satisfied))

    def summary(self):
        return {
            "n_runs": self.n_runs,
            "n_diverged": self.n_diverged,
            "satisfaction": self.satisfaction,
            "probe_time": float(self.probe_time),
            "avg_rel_err": {n: float(v) for n, v in zip(self.param_names, self.avg_rel_err)},
            "max_rel_err": {n: float(v) for n, v in zip(self.param_names, self.max_rel_err)},
        }

    def write(self, outdir):
        os.makedirs(outdir, exist_ok=True)
        names = self.param_names
        with open(os.path.join(outdir, "runs.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", *[f"{n}_true" for n in names], *[f"{n}_hat" for n in names],
                        *[f"{n}_rel_err" for n in names], "converged", "constrained_min",
                        "satisfied", "probe_value"])
            for i in range(self.n_runs):
                w.writerow([i, *map(_fmt, self.theta_true[i]), *map(_fmt, self.theta_hat[i]),
                            *map(_fmt, self.rel_err[i]), int(self.converged[i]),
                            _fmt(self.constrained_min[i]), int(self.satisfied[i]),
                            _fmt(self.probe_values[i])])
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            fh.write(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        with open(os.path.join(outdir, "histogram.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for k, c in enumerate(self.hist_counts):
                w.writerow([_fmt(self.hist_edges[k]), _fmt(self.hist_edges[k + 1]), int(c)])


def _fmt(v):
    return repr(float(v))


def _chunks(n, k):
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_mc(model, uset, theta_nominal, inp, cfg, constraint=None, x0_nominal=None):
    """Monte Carlo re-simulation and re-estimation under input ``inp``.

    ``constraint`` (a ``ChanceConstraint``) defines the satisfaction
    indicator ``b * (c @ x(t)) < x_max`` on the check grid and the quantity
    recorded at the probe time. Without one, every run counts as satisfied
    and the first output is histogrammed.
    """
    theta_nominal = np.asarray(theta_nominal, dtype=float)
    x0_nominal = np.asarray(model.x0[:model.n_base] if x0_nominal is None else x0_nominal, float)
    meas, check, probe = cfg.grids(inp.t_f)
    noise = cfg.noise or model.noise
    sim_grid = np.unique(np.concatenate([[0.0], meas, check, [probe]]))
    mi, ci, pi = (np.searchsorted(sim_grid, g) for g in (meas, check, np.atleast_1d(probe)))

    n, p = cfg.n_runs, model.n_theta
    theta_true = np.empty((n, p))
    x0_true = np.empty((n, len(x0_nominal)))
    normals = []
    for i in range(n):
        rng = run_rng(cfg.seed, i)
        theta_true[i], x0_true[i] = uset.sample(rng, theta_nominal, x0_nominal)
        normals.append(rng.standard_normal((len(meas), model.n_y)))
    normals = np.stack(normals, axis=1)

    lo = np.full(p, -np.inf)
    hi = np.full(p, np.inf)
    for j in range(p):
        d = uset.dist_for("parameter", j)
        if d is not None and d.is_random:
            lo[j], hi[j] = d.support()
    means = theta_nominal.copy()
    for (t, j), d in uset.entries:
        if t == "parameter":
            means[j] = d.mean()

    def work(idx):
        x0 = model.initial_state(x0_true[idx])
        tr = integrate(model, inp, theta_true[idx], x0, sim_grid, step=cfg.step, sensitivities=False)
        y_true = tr.y[mi]
        y_meas = y_true + cfg.noise_scale * noise.sigma(y_true) * normals[:, idx]
        W = 1.0 / noise.sigma(y_meas) ** 2
        init = theta_true[idx] if cfg.init == "true" else np.tile(means, (len(idx), 1))
        if cfg.estimator == GAUSS_NEWTON:
            th, _, conv, _ = _gauss_newton(model, inp, meas, y_meas, W, init, x0, lo, hi,
                                           cfg.max_iter, cfg.step)
        else:
            th = np.empty((len(idx), p))
            conv = np.empty(len(idx), dtype=bool)
            for k in range(len(idx)):
                r = wls_estimate(model, inp, meas, y_meas[:, k], init[k], (lo, hi), x0[k],
                                 sigma=1.0 / np.sqrt(W[:, k]), method=NELDER_MEAD,
                                 max_iter=cfg.max_iter, step=cfg.step)
                th[k], conv[k] = r.theta, r.converged
        if constraint is not None:
            q = tr.x @ constraint.c
            qmin = constraint.b * q[ci]
            cmin = q[ci].min(axis=0) if constraint.b < 0 else q[ci].max(axis=0)
            sat = np.all(qmin < constraint.x_max, axis=0)
            pv = q[pi[0]]
        else:
            cmin = tr.y[ci, :, 0].min(axis=0)
            sat = np.ones(len(idx), dtype=bool)
            pv = tr.y[pi[0], :, 0]
        return th, conv & np.all(np.isfinite(th), axis=1), cmin, sat, pv

    parts = _chunks(n, cfg.threads)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(work, parts))
    else:
        results = [work(idx) for idx in parts]
    theta_hat = np.concatenate([r[0] for r in results])
    converged = np.concatenate([r[1] for r in results])
    cmin = np.concatenate([r[2] for r in results])
    sat = np.concatenate([r[3] for r in results])
    pv = np.concatenate([r[4] for r in results])
    rel = np.abs(theta_hat - theta_true) / np.abs(theta_true)
    counts, edges = np.histogram(pv, bins=cfg.hist_bins)
    return McReport(list(model.param_names), theta_true, theta_hat, converged, rel, cmin, sat,
                    pv, probe, edges, counts, constraint)


def compare_designs(report_std, report_robust):
    """Side-by-side error and satisfaction statistics; ratios are standard / robust."""
    if report_std.n_runs != report_robust.n_runs:
        raise ValueError("reports have different run counts")
    if not np.array_equal(report_std.theta_true, report_robust.theta_true):
        raise ValueError("reports were not generated from identical realizations")
    rows = []
    for j, name in enumerate(report_std.param_names):
        for label, s, r in (("avg_rel_err", report_std.avg_rel_err[j], report_robust.avg_rel_err[j]),
                            ("max_rel_err", report_std.max_rel_err[j], report_robust.max_rel_err[j])):
            rows.append({"metric": f"{label}_{name}", "standard": float(s), "robust": float(r),
                         "ratio": float(s / r) if r != 0 else (1.0 if s == 0 else np.inf)})
    s, r = report_std.satisfaction, report_robust.satisfaction
    rows.append({"metric": "satisfaction", "standard": s, "robust": r,
                 "ratio": s / r if r != 0 else (1.0 if s == 0 else np.inf)})
    return rows
