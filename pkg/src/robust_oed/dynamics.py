"""Model description, delay chains and the fixed-step augmented integrator.

Every callable on a model works on a leading batch axis: ``x`` has shape
``(B, n_x)``, ``theta`` ``(B, n_theta)`` and ``u`` is a scalar shared by the
batch. This lets one RK4 sweep integrate all collocation nodes (or all Monte
Carlo runs) together.
"""
import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import min_eigenvalue  # noqa: F401  (re-exported)

DEFAULT_STEP = 0.05


class IntegrationError(RuntimeError):
    def __init__(self, t, msg="non-finite state"):
        super().__init__(f"{msg} at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class NoisePolicy:
    """Measurement noise standard deviation as a function of the noise-free output.

    ``relative``: ``sigma = level * max(|y|, floor)``.
    ``absolute``: ``sigma = level`` for every output.
    """

    kind: str = "relative"
    level: float = 0.10
    floor: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("relative", "absolute"):
            raise ValueError(f"unknown noise policy {self.kind!r}")
        if self.level <= 0:
            raise ValueError("noise level must be positive")
        if self.kind == "relative" and self.floor <= 0:
            raise ValueError("relative noise needs a positive floor")

    def sigma(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "absolute":
            return np.full_like(y, self.level)
        return self.level * np.maximum(np.abs(y), self.floor)


def _fd_jacobian(fun, v, eps=1e-6):
    """Central-difference Jacobian of ``fun`` (batched) w.r.t. ``v`` of shape (B, n)."""
    B, n = v.shape
    cols = []
    for j in range(n):
        hj = eps * np.maximum(1.0, np.abs(v[:, j]))
        vp = v.copy()
        vm = v.copy()
        vp[:, j] += hj
        vm[:, j] -= hj
        cols.append((fun(vp) - fun(vm)) / (2.0 * hj)[:, None])
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class ModelSpec:
    """ODE model ``dx/dt = f(x, u, theta)``, ``y = h(x)``.

    Jacobian callables are optional; missing ones fall back to central
    finite differences.
    """

    n_x: int
    n_y: int
    n_theta: int
    f: object
    h: object
    df_dx: object = None
    df_dtheta: object = None
    dh_dx: object = None
    x0: np.ndarray = None
    noise: NoisePolicy = field(default_factory=NoisePolicy)
    n_u: int = 1
    state_names: tuple = ()
    output_names: tuple = ()
    param_names: tuple = ()
    # number of leading "physical" states; trailing ones are delay-chain stages
    n_base: int = None
    chain_sources: tuple = ()
    # optional fast path: sens_rhs(x, u, theta, S) = df_dx @ S + df_dtheta
    sens_rhs: object = None

    def __post_init__(self):
        if self.n_base is None:
            object.__setattr__(self, "n_base", self.n_x)
        if self.x0 is not None:
            x0 = np.asarray(self.x0, dtype=float)
            if x0.shape != (self.n_x,):
                raise ValueError(f"x0 must have {self.n_x} entries, got {x0.shape}")
            object.__setattr__(self, "x0", x0)
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"x{i + 1}" for i in range(self.n_x)))
        if not self.output_names:
            object.__setattr__(self, "output_names", tuple(f"y{i + 1}" for i in range(self.n_y)))
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"theta{i + 1}" for i in range(self.n_theta)))

    def jac_x(self, x, u, theta):
        if self.df_dx is not None:
            return self.df_dx(x, u, theta)
        return _fd_jacobian(lambda v: self.f(v, u, theta), x)

    def jac_theta(self, x, u, theta):
        if self.df_dtheta is not None:
            return self.df_dtheta(x, u, theta)
        return _fd_jacobian(lambda p: self.f(x, u, p), theta)

    def jac_h(self, x):
        if self.dh_dx is not None:
            return self.dh_dx(x)
        return _fd_jacobian(self.h, x)

    def initial_state(self, x0_base):
        """Full initial state from values of the physical states.

        Delay-chain stages start at the value of the state they delay.
        """
        x0_base = np.asarray(x0_base, dtype=float)
        if x0_base.shape[-1] == self.n_x:
            return x0_base
        if x0_base.shape[-1] != self.n_base:
            raise ValueError(f"expected {self.n_base} or {self.n_x} initial values")
        parts = [x0_base]
        for src, n_stages in self.chain_sources:
            parts.append(np.repeat(x0_base[..., src:src + 1], n_stages, axis=-1))
        return np.concatenate(parts, axis=-1)

    def with_noise(self, noise):
        return replace(self, noise=noise)


@dataclass(frozen=True)
class DelayedModel:
    """Model whose right-hand side also reads delayed copies of some states.

    ``f(x, xd, u, theta)`` where ``xd[:, r]`` stands for ``x[:, j_r](t - tau_r)``
    for the r-th delayed reference. ``df_dxd`` returns ``(B, n_x, n_refs)``.
    """

    n_x: int
    n_y: int
    n_theta: int
    f: object
    h: object
    df_dx: object = None
    df_dxd: object = None
    df_dtheta: object = None
    dh_dx: object = None
    x0: np.ndarray = None
    noise: NoisePolicy = field(default_factory=NoisePolicy)
    state_names: tuple = ()
    output_names: tuple = ()
    param_names: tuple = ()


def delay_chain(model, delayed_refs, n_stages=20):
    """Replace delayed arguments by linear chains of ``n_stages`` first-order stages.

    Stage ``i`` of the chain for reference ``(j, tau)`` obeys
    ``dz_i/dt = (n_stages / tau) (z_{i-1} - z_i)`` with ``z_0 = x_j``; the last
    stage stands in for ``x_j(t - tau)``.
    """
    if n_stages < 1:
        raise ValueError(f"n_stages must be >= 1, got {n_stages}")
    refs = [(int(j), float(tau)) for j, tau in delayed_refs]
    for j, tau in refs:
        if tau <= 0:
            raise ValueError(f"delay must be positive, got {tau}")
        if not 0 <= j < model.n_x:
            raise ValueError(f"delayed state index {j} out of range")
    nb, R, N = model.n_x, len(refs), n_stages
    n = nb + R * N
    src = np.array([j for j, _ in refs], dtype=int)
    rate = np.array([N / tau for _, tau in refs])

    def split(x):
        z = x[:, nb:].reshape(x.shape[0], R, N)
        return x[:, :nb], z

    def f(x, u, theta):
        xb, z = split(x)
        out = np.empty_like(x)
        out[:, :nb] = model.f(xb, z[:, :, -1], u, theta)
        prev = np.concatenate([xb[:, src][:, :, None], z[:, :, :-1]], axis=2)
        out[:, nb:] = (rate[None, :, None] * (prev - z)).reshape(x.shape[0], R * N)
        return out

    # constant part of the Jacobian (chain rows)
    J_chain = np.zeros((n, n))
    for r in range(R):
        for s in range(N):
            row = nb + r * N + s
            J_chain[row, row] = -rate[r]
            J_chain[row, src[r] if s == 0 else row - 1] = rate[r]

    def df_dx(x, u, theta):
        xb, z = split(x)
        xd = z[:, :, -1]
        J = np.broadcast_to(J_chain, (x.shape[0], n, n)).copy()
        if model.df_dx is not None:
            J[:, :nb, :nb] = model.df_dx(xb, xd, u, theta)
        else:
            J[:, :nb, :nb] = _fd_jacobian(lambda v: model.f(v, xd, u, theta), xb)
        if model.df_dxd is not None:
            Jd = model.df_dxd(xb, xd, u, theta)
        else:
            Jd = _fd_jacobian(lambda v: model.f(xb, v, u, theta), xd)
        for r in range(R):
            J[:, :nb, nb + r * N + N - 1] = Jd[:, :, r]
        return J

    def df_dtheta(x, u, theta):
        xb, z = split(x)
        out = np.zeros((x.shape[0], n, model.n_theta))
        if model.df_dtheta is not None:
            out[:, :nb] = model.df_dtheta(xb, z[:, :, -1], u, theta)
        else:
            out[:, :nb] = _fd_jacobian(lambda p: model.f(xb, z[:, :, -1], u, p), theta)
        return out

    def h(x):
        return model.h(x[:, :nb])

    def dh_dx(x):
        out = np.zeros((x.shape[0], model.n_y, n))
        if model.dh_dx is not None:
            out[:, :, :nb] = model.dh_dx(x[:, :nb])
        else:
            out[:, :, :nb] = _fd_jacobian(model.h, x[:, :nb])
        return out

    def sens_rhs(x, u, theta, S):
        # exploits the chain structure instead of forming the full (n, n) Jacobian
        xb, z = split(x)
        xd = z[:, :, -1]
        Sb = S[:, :nb]
        Sz = S[:, nb:].reshape(S.shape[0], R, N, -1)
        Jb = model.df_dx(xb, xd, u, theta) if model.df_dx is not None else \
            _fd_jacobian(lambda v: model.f(v, xd, u, theta), xb)
        Jd = model.df_dxd(xb, xd, u, theta) if model.df_dxd is not None else \
            _fd_jacobian(lambda v: model.f(xb, v, u, theta), xd)
        Jt = model.df_dtheta(xb, xd, u, theta) if model.df_dtheta is not None else \
            _fd_jacobian(lambda p: model.f(xb, xd, u, p), theta)
        out = np.empty_like(S)
        out[:, :nb] = Jb @ Sb + Jd @ Sz[:, :, -1] + Jt
        prev = np.concatenate([Sb[:, src][:, :, None], Sz[:, :, :-1]], axis=2)
        out[:, nb:] = (rate[None, :, None, None] * (prev - Sz)).reshape(S.shape[0], R * N, -1)
        return out

    names = tuple(model.state_names) or tuple(f"x{i + 1}" for i in range(nb))
    chain_names = tuple(f"{names[j]}_lag{s + 1}" for j, _ in refs for s in range(N))
    spec = ModelSpec(
        n_x=n, n_y=model.n_y, n_theta=model.n_theta, f=f, h=h,
        df_dx=df_dx, df_dtheta=df_dtheta, dh_dx=dh_dx,
        noise=model.noise, state_names=names + chain_names,
        output_names=tuple(model.output_names), param_names=tuple(model.param_names),
        n_base=nb, chain_sources=tuple((j, N) for j, _ in refs), sens_rhs=sens_rhs,
    )
    if model.x0 is not None:
        spec = replace(spec, x0=spec.initial_state(model.x0))
    return spec


@dataclass(frozen=True)
class PiecewiseConstantInput:
    """Input held constant on ``len(levels)`` equal segments of ``[0, t_f]``."""

    levels: np.ndarray
    t_f: float
    bounds: tuple = (0.0, 1.0)

    def __post_init__(self):
        levels = np.atleast_1d(np.asarray(self.levels, dtype=float))
        object.__setattr__(self, "levels", levels)
        if self.t_f <= 0:
            raise ValueError("horizon must be positive")
        lo, hi = self.bounds
        if lo > hi:
            raise ValueError("input bounds are inverted")
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(levels < lo - tol) or np.any(levels > hi + tol):
            raise ValueError(f"input levels {levels} outside bounds {self.bounds}")

    @property
    def n_seg(self):
        return len(self.levels)

    @property
    def breakpoints(self):
        return np.linspace(0.0, self.t_f, self.n_seg + 1)

    def segment(self, t):
        t = np.asarray(t, dtype=float)
        k = np.floor(t * self.n_seg / self.t_f + 1e-12).astype(int)
        return np.clip(k, 0, self.n_seg - 1)

    def __call__(self, t):
        return self.levels[self.segment(t)]

    def to_csv(self, path):
        bp = self.breakpoints
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "u"])
            for k in range(self.n_seg + 1):
                w.writerow([repr(float(bp[k])), repr(float(self.levels[min(k, self.n_seg - 1)]))])

    @classmethod
    def from_csv(cls, path, bounds=(0.0, 1.0)):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: need at least two rows (segment starts and horizon end)")
        t = np.array([float(r["t"]) for r in rows])
        u = np.array([float(r["u"]) for r in rows])
        levels = u[:-1]
        inp = cls(levels, float(t[-1]), bounds)
        if not np.allclose(t, inp.breakpoints, rtol=0, atol=1e-9 * t[-1]):
            raise ValueError(f"{path}: segment start times are not equidistant over [0, {t[-1]}]")
        return inp


@dataclass
class Trajectory:
    """Integrated trajectory at the requested grid.

    Arrays carry a batch axis after time: ``x`` is ``(T, B, n_x)``, ``S`` is
    ``(T, B, n_x, n_theta)`` and ``F`` is ``(T, B, n_theta, n_theta)``.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    S: np.ndarray = None
    F: np.ndarray = None

    def to_csv(self, path, member=0, state_names=None, output_names=None):
        n_x, n_y = self.x.shape[-1], self.y.shape[-1]
        state_names = state_names or [f"x{i + 1}" for i in range(n_x)]
        output_names = output_names or [f"y{i + 1}" for i in range(n_y)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *state_names, *output_names])
            for k, tk in enumerate(self.t):
                w.writerow([repr(float(v)) for v in (tk, *self.x[k, member], *self.y[k, member])])


def _time_lattice(grid, breakpoints, step):
    knots = np.union1d(grid, breakpoints[(breakpoints > grid[0]) & (breakpoints < grid[-1])])
    steps = []
    for a, b in zip(knots[:-1], knots[1:]):
        n = max(1, int(np.ceil((b - a) / step - 1e-9)))
        steps.append((a, (b - a) / n, n))
    return knots, steps


def integrate(model, inp, theta, x0=None, grid=None, step=DEFAULT_STEP,
              sensitivities=True, s0=None):
    """Classical RK4 on states, sensitivities ``dx/dtheta`` and the Fisher matrix.

    ``theta`` is ``(n_theta,)`` or ``(B, n_theta)``; ``x0`` likewise (``None``
    uses ``model.x0``). The Fisher matrix accumulates
    ``(dh/dx S)^T Sigma^{-1} (dh/dx S)`` with ``Sigma`` from ``model.noise``
    evaluated at the current noise-free output.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    B, p = theta.shape
    if p != model.n_theta:
        raise ValueError(f"expected {model.n_theta} parameters, got {p}")
    if x0 is None:
        if model.x0 is None:
            raise ValueError("no initial state given")
        x0 = model.x0
    x0 = model.initial_state(np.asarray(x0, dtype=float))
    x = np.broadcast_to(np.atleast_2d(x0), (B, model.n_x)).astype(float)
    n = model.n_x
    if grid is None:
        grid = np.arange(0.0, inp.t_f + 0.5, 1.0)
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and be strictly increasing")

    if sensitivities:
        S = np.zeros((B, n, p)) if s0 is None else np.broadcast_to(s0, (B, n, p)).astype(float)
        F = np.zeros((B, p, p))
        state = np.concatenate([x, S.reshape(B, -1), F.reshape(B, -1)], axis=1)
    else:
        state = x.copy()

    def rhs(z, u):
        xs = z[:, :n]
        dx = model.f(xs, u, theta)
        if not sensitivities:
            return dx
        Sz = z[:, n:n + n * p].reshape(B, n, p)
        if model.sens_rhs is not None:
            dS = model.sens_rhs(xs, u, theta, Sz)
        else:
            dS = model.jac_x(xs, u, theta) @ Sz + model.jac_theta(xs, u, theta)
        sig = model.noise.sigma(model.h(xs))
        G = (model.jac_h(xs) @ Sz) / sig[:, :, None]
        dF = np.einsum("bki,bkj->bij", G, G)
        return np.concatenate([dx, dS.reshape(B, -1), dF.reshape(B, -1)], axis=1)

    knots, steps = _time_lattice(grid, inp.breakpoints, step)
    on_grid = np.isin(knots, grid)
    out = [state.copy()]
    for k, (a, h, n_sub) in enumerate(steps):
        u = float(inp(a + 0.5 * h * n_sub))
        for _ in range(n_sub):
            k1 = rhs(state, u)
            k2 = rhs(state + 0.5 * h * k1, u)
            k3 = rhs(state + 0.5 * h * k2, u)
            k4 = rhs(state + h * k3, u)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise IntegrationError(knots[k + 1])
        if on_grid[k + 1]:
            out.append(state.copy())

    Z = np.array(out)
    T = Z.shape[0]
    xs = Z[:, :, :n]
    y = model.h(xs.reshape(T * B, n)).reshape(T, B, model.n_y)
    traj = Trajectory(grid, xs, y)
    if sensitivities:
        traj.S = Z[:, :, n:n + n * p].reshape(T, B, n, p)
        Fz = Z[:, :, n + n * p:].reshape(T, B, p, p)
        traj.F = 0.5 * (Fz + np.swapaxes(Fz, -1, -2))
    return traj
