"""Uncertainty descriptions and the built-in JAK-STAT5 signaling model."""
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import DelayedModel, NoisePolicy, delay_chain
from .polynomials import PolyFamily

BETA4 = "beta4"
UNIFORM = "uniform"
GAUSSIAN = "gaussian"
DIRAC = "dirac"

PARAMETER = "parameter"
INITIAL_STATE = "initial_state"


@dataclass(frozen=True)
class Distribution:
    """Univariate time-invariant uncertainty.

    ``beta4``: ``(alpha, beta, lo, hi)``; ``uniform``: ``(lo, hi)``;
    ``gaussian``: ``(mu, sigma)``; ``dirac``: ``(value,)``.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        need = {BETA4: 4, UNIFORM: 2, GAUSSIAN: 2, DIRAC: 1}
        if self.kind not in need:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if len(p) != need[self.kind]:
            raise ValueError(f"{self.kind} takes {need[self.kind]} parameters, got {len(p)}")
        if self.kind == BETA4 and (p[0] <= 0 or p[1] <= 0 or p[2] >= p[3]):
            raise ValueError(f"invalid beta4 parameters {p}")
        if self.kind == UNIFORM and p[0] >= p[1]:
            raise ValueError(f"invalid uniform bounds {p}")
        if self.kind == GAUSSIAN and p[1] <= 0:
            raise ValueError(f"gaussian sigma must be positive, got {p[1]}")

    @classmethod
    def beta4(cls, alpha, beta, lo, hi):
        return cls(BETA4, (alpha, beta, lo, hi))

    @classmethod
    def uniform(cls, lo, hi):
        return cls(UNIFORM, (lo, hi))

    @classmethod
    def gaussian(cls, mu, sigma):
        return cls(GAUSSIAN, (mu, sigma))

    @classmethod
    def dirac(cls, value):
        return cls(DIRAC, (value,))

    @property
    def is_random(self):
        return self.kind != DIRAC

    def mean(self):
        p = self.params
        if self.kind == BETA4:
            a, b, lo, hi = p
            return lo + (hi - lo) * a / (a + b)
        if self.kind == UNIFORM:
            return 0.5 * (p[0] + p[1])
        return p[0]

    def var(self):
        p = self.params
        if self.kind == BETA4:
            a, b, lo, hi = p
            return (hi - lo) ** 2 * a * b / ((a + b) ** 2 * (a + b + 1.0))
        if self.kind == UNIFORM:
            return (p[1] - p[0]) ** 2 / 12.0
        if self.kind == GAUSSIAN:
            return p[1] ** 2
        return 0.0

    def support(self):
        p = self.params
        if self.kind in (BETA4,):
            return p[2], p[3]
        if self.kind == UNIFORM:
            return p[0], p[1]
        if self.kind == GAUSSIAN:
            return -np.inf, np.inf
        return p[0], p[0]

    def sample(self, rng, size=None):
        p = self.params
        if self.kind == BETA4:
            a, b, lo, hi = p
            ga = rng.gamma(a, size=size)
            gb = rng.gamma(b, size=size)
            return lo + (hi - lo) * ga / (ga + gb)
        if self.kind == UNIFORM:
            return rng.uniform(p[0], p[1], size=size)
        if self.kind == GAUSSIAN:
            return p[0] + p[1] * rng.standard_normal(size=size)
        return p[0] if size is None else np.full(size, p[0])

    def standard(self):
        """``(family, map)`` pairing this distribution with a standard variable."""
        p = self.params
        if self.kind == BETA4:
            a, b, lo, hi = p
            return PolyFamily.jacobi(b - 1.0, a - 1.0), lambda xi: lo + (hi - lo) * (xi + 1.0) / 2.0
        if self.kind == UNIFORM:
            lo, hi = p
            return PolyFamily.legendre(), lambda xi: lo + (hi - lo) * (xi + 1.0) / 2.0
        if self.kind == GAUSSIAN:
            mu, sigma = p
            return PolyFamily.hermite(), lambda xi: mu + sigma * xi
        raise ValueError("a Dirac distribution has no standard random variable")

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["params"]))


def sample(dist, rng):
    return dist.sample(rng)


@dataclass(frozen=True)
class UncertaintySet:
    """Ordered ``((target, index), Distribution)`` entries.

    ``target`` is ``"parameter"`` or ``"initial_state"``. Quantities not
    listed keep their nominal values.
    """

    entries: tuple

    def __post_init__(self):
        entries = tuple(((str(t), int(i)), d) for (t, i), d in self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for key, d in entries:
            if key[0] not in (PARAMETER, INITIAL_STATE):
                raise ValueError(f"unknown uncertainty target {key[0]!r}")
            if key in seen:
                raise ValueError(f"{key[0]} {key[1]} targeted more than once")
            seen.add(key)

    @property
    def n_xi(self):
        return sum(d.is_random for _, d in self.entries)

    def random_entries(self):
        return [(k, d) for k, d in self.entries if d.is_random]

    def dist_for(self, target, index):
        for (t, i), d in self.entries:
            if t == target and i == index:
                return d
        return None

    def means(self):
        """Same set with every entry collapsed to a Dirac at its mean."""
        return UncertaintySet(tuple((k, Distribution.dirac(d.mean())) for k, d in self.entries))

    def sample(self, rng, theta_nominal, x0_nominal):
        """One joint realization ``(theta, x0)``; entries drawn in listed order."""
        theta = np.array(theta_nominal, dtype=float)
        x0 = np.array(x0_nominal, dtype=float)
        for (t, i), d in self.entries:
            v = d.sample(rng)
            if t == PARAMETER:
                theta[i] = v
            else:
                x0[i] = v
        return theta, x0


def to_standard(uset, theta_nominal, x0_nominal):
    """Families of the standard variables and the map ``xi -> (theta, x0)``.

    The map accepts ``xi`` of shape ``(B, n_xi)`` and returns arrays of shape
    ``(B, n_theta)`` and ``(B, len(x0_nominal))``. Dirac entries are inlined.
    """
    if not uset.entries:
        raise ValueError("empty uncertainty set")
    theta_nominal = np.asarray(theta_nominal, dtype=float)
    x0_nominal = np.asarray(x0_nominal, dtype=float)
    families, maps, fixed = [], [], []
    for (t, i), d in uset.entries:
        if d.is_random:
            fam, fn = d.standard()
            families.append(fam)
            maps.append((t, i, fn))
        else:
            fixed.append((t, i, d.params[0]))

    def mapping(xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        B = xi.shape[0]
        theta = np.tile(theta_nominal, (B, 1))
        x0 = np.tile(x0_nominal, (B, 1))
        for t, i, v in fixed:
            (theta if t == PARAMETER else x0)[:, i] = v
        for j, (t, i, fn) in enumerate(maps):
            (theta if t == PARAMETER else x0)[:, i] = fn(xi[:, j])
        return theta, x0

    return families, mapping


# JAK-STAT5 -----------------------------------------------------------------

STAT5_S1 = 0.33
STAT5_S2 = 0.26
STAT5_K3 = 1.0
STAT5_TAU = 8.0
STAT5_Y2_MIN = 0.038


def stat5_delayed_model(x0=None, k3=STAT5_K3, noise=None):
    """JAK-STAT5 pathway with the explicit delayed argument ``x3(t - tau)``.

    States: unphosphorylated STAT5, activated STAT5, dimers, nuclear STAT5.
    Parameters ``theta = (k1, k2)``; outputs ``y1 = s1 (x2 + x3)`` and
    ``y2 = s2 (x1 + x2 + x3)``.
    """
    s1, s2 = STAT5_S1, STAT5_S2

    def f(x, xd, u, theta):
        k1, k2 = theta[:, 0], theta[:, 1]
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        x3d = xd[:, 0]
        act = k1 * x1 * u
        dim = k3 * x2 * x2
        return np.stack([
            -act + k2 * x3d,
            -dim + act,
            -k2 * x3 + dim,
            -k2 * x3d + k2 * x3,
        ], axis=1)

    def df_dx(x, xd, u, theta):
        k1, k2 = theta[:, 0], theta[:, 1]
        x2 = x[:, 1]
        J = np.zeros((x.shape[0], 4, 4))
        J[:, 0, 0] = -k1 * u
        J[:, 1, 0] = k1 * u
        J[:, 1, 1] = -2.0 * k3 * x2
        J[:, 2, 1] = 2.0 * k3 * x2
        J[:, 2, 2] = -k2
        J[:, 3, 2] = k2
        return J

    def df_dxd(x, xd, u, theta):
        k2 = theta[:, 1]
        J = np.zeros((x.shape[0], 4, 1))
        J[:, 0, 0] = k2
        J[:, 3, 0] = -k2
        return J

    def df_dtheta(x, xd, u, theta):
        x1, x3, x3d = x[:, 0], x[:, 2], xd[:, 0]
        J = np.zeros((x.shape[0], 4, 2))
        J[:, 0, 0] = -x1 * u
        J[:, 1, 0] = x1 * u
        J[:, 0, 1] = x3d
        J[:, 2, 1] = -x3
        J[:, 3, 1] = x3 - x3d
        return J

    H = np.array([[0.0, s1, s1, 0.0], [s2, s2, s2, 0.0]])

    def h(x):
        return x[..., :4] @ H.T

    def dh_dx(x):
        return np.broadcast_to(H, (x.shape[0], 2, 4))

    return DelayedModel(
        n_x=4, n_y=2, n_theta=2, f=f, h=h,
        df_dx=df_dx, df_dxd=df_dxd, df_dtheta=df_dtheta, dh_dx=dh_dx,
        x0=np.asarray(STAT5_X0 if x0 is None else x0, dtype=float),
        noise=noise or NoisePolicy(),
        state_names=("x1", "x2", "x3", "x4"), output_names=("y1", "y2"),
        param_names=("k1", "k2"),
    )


STAT5_X0 = (1.0, 0.0, 0.0, 0.0)


def stat5_uncertainty():
    return UncertaintySet((
        ((PARAMETER, 0), Distribution.beta4(2, 5, 1.90, 2.34)),
        ((PARAMETER, 1), Distribution.beta4(2, 5, 0.094, 0.124)),
    ))


def stat5_model(n_stages=20, x0=None, noise=None):
    """Delay-chain JAK-STAT5 model and its parametric uncertainty.

    Returns ``(ModelSpec, UncertaintySet)``; the model's nominal ``theta``
    is the vector of distribution means (``model.theta_nominal``).
    """
    if n_stages < 1:
        raise ValueError(f"n_stages must be >= 1, got {n_stages}")
    spec = delay_chain(stat5_delayed_model(x0=x0, noise=noise), [(2, STAT5_TAU)], n_stages)
    return spec, stat5_uncertainty()


def stat5_theta_nominal():
    return np.array([d.mean() for _, d in stat5_uncertainty().entries])


def stat5_y2_weights(model):
    """Row vector ``c`` with ``c @ x = y2`` for the delay-chain model."""
    c = np.zeros(model.n_x)
    c[:3] = STAT5_S2
    return c


MODELS = {"stat5": stat5_model}
