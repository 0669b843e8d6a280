"""Single-letter objects of the decoupled channel.

The sparse-Gaussian source, the scalar penalties with their proximal maps,
and the one-step RSB objective ``K``, its minimum ``L`` and minimizer ``g``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .errors import ConfigError, DomainError, NoMinimizerError, NonFiniteError
from .quadrature import DEFAULT_NODES, hermite_rule

# stand-in for +inf when a custom penalty restricts the support
LARGE_PENALTY = 1e12

_N_STARTS = 33
_START_SPAN = 6.0


@dataclass(frozen=True)
class SourcePrior:
    """``(1 - s) delta_0 + s N(0, 1)``."""

    sparsity: float

    def __post_init__(self):
        s = float(self.sparsity)
        if not (0.0 <= s <= 1.0):
            raise ConfigError(f"sparsity must lie in [0, 1], got {self.sparsity!r}")
        object.__setattr__(self, "sparsity", s)

    @property
    def second_moment(self) -> float:
        return self.sparsity

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        support = rng.random(size) < self.sparsity
        return np.where(support, rng.standard_normal(size), 0.0)


class PenaltyKind(str, enum.Enum):
    L2 = "l2"
    L1 = "l1"
    L0 = "l0"
    CUSTOM = "custom"


@dataclass(frozen=True)
class PenaltySpec:
    """Scalar penalty ``u``.

    ``L2`` is ``v**2 / 2``, ``L1`` is ``|v|`` and ``L0`` is ``1{v != 0}``.
    ``CUSTOM`` wraps a user function with ``u(0) = 0`` that should be bounded
    below; it is evaluated one scalar at a time.
    """

    kind: PenaltyKind
    func: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        kind = PenaltyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PenaltyKind.CUSTOM:
            if self.func is None or not callable(self.func):
                raise ConfigError("custom penalty needs a callable")
            u0 = float(self.func(0.0))
            if u0 != 0.0:
                raise ConfigError(f"custom penalty must satisfy u(0) = 0, got {u0!r}")
        elif self.func is not None:
            raise ConfigError(f"{kind.value} penalty takes no function")

    @classmethod
    def l2(cls):
        return cls(PenaltyKind.L2)

    @classmethod
    def l1(cls):
        return cls(PenaltyKind.L1)

    @classmethod
    def l0(cls):
        return cls(PenaltyKind.L0)

    @classmethod
    def custom(cls, func):
        return cls(PenaltyKind.CUSTOM, func)

    @property
    def builtin(self) -> bool:
        return self.kind is not PenaltyKind.CUSTOM


@dataclass(frozen=True)
class ChannelParams:
    """Effective tuning ``xi`` and noise amplitudes ``f`` (outer) and ``w`` (inner)."""

    xi: float
    f: float
    w: float = 0.0

    def __post_init__(self):
        for name in ("xi", "f", "w"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.xi <= 0:
            raise DomainError(f"xi must be positive, got {self.xi!r}")
        if self.f < 0 or self.w < 0:
            raise DomainError(f"noise amplitudes must be non-negative, got f={self.f!r}, w={self.w!r}")


def penalty_value(penalty: PenaltySpec, v):
    """``u(v)``, elementwise."""
    v = np.asarray(v, dtype=float)
    kind = penalty.kind
    if kind is PenaltyKind.L2:
        out = 0.5 * v * v
    elif kind is PenaltyKind.L1:
        out = np.abs(v)
    elif kind is PenaltyKind.L0:
        out = (v != 0.0).astype(float)
    else:
        out = np.vectorize(lambda t: float(penalty.func(t)), otypes=[float])(v)
    return out if out.ndim else float(out)


def kinks(penalty: PenaltySpec, xi: float) -> tuple[float, ...]:
    """Inputs ``y`` at which ``prox(penalty, y, xi)`` is not smooth."""
    if penalty.kind is PenaltyKind.L1:
        return (-xi, xi)
    if penalty.kind is PenaltyKind.L0:
        t = math.sqrt(2.0 * xi)
        return (-t, t)
    return ()


def _custom_prox_scalar(u, y: float, xi: float) -> float:
    def obj(v):
        return (y - v) ** 2 / (2.0 * xi) + float(u(v))

    half = _START_SPAN * math.sqrt(xi)
    grid = np.linspace(y - half, y + half, _N_STARTS)
    vals = np.array([obj(v) for v in grid])
    if np.any(np.isnan(vals)) or np.any(vals == -np.inf):
        raise NoMinimizerError(f"penalty is undefined or -inf near y={y!r}")
    best_v, best = float(grid[np.argmin(vals)]), float(vals.min())
    step = grid[1] - grid[0]
    # refine every local minimum of the start grid
    for i in range(_N_STARTS):
        left = vals[i - 1] if i > 0 else np.inf
        right = vals[i + 1] if i < _N_STARTS - 1 else np.inf
        if vals[i] <= left and vals[i] <= right:
            res = optimize.minimize_scalar(
                obj, bounds=(grid[i] - step, grid[i] + step), method="bounded", options={"xatol": 1e-10}
            )
            if res.fun < best:
                best_v, best = float(res.x), float(res.fun)
    # the quadratic dominates far out unless u is unbounded below
    scale = 1.0 + abs(y) + math.sqrt(xi)
    for far in (1e2, 1e4, 1e6):
        for sgn in (-1.0, 1.0):
            val = obj(y + sgn * far * scale)
            if not (val >= best - 1e-12 * (1.0 + abs(best))):
                raise NoMinimizerError(f"penalty appears unbounded below (objective {val!r} at distance {far * scale:g})")
    return best_v


def prox(penalty: PenaltySpec, y, xi: float):
    """Global minimizer of ``(y - v)**2 / (2 xi) + u(v)``, elementwise in ``y``.

    For ``L0`` the tie ``|y| = sqrt(2 xi)`` resolves to 0.
    """
    if not xi > 0:
        raise DomainError(f"xi must be positive, got {xi!r}")
    y = np.asarray(y, dtype=float)
    kind = penalty.kind
    if kind is PenaltyKind.L2:
        out = y / (1.0 + xi)
    elif kind is PenaltyKind.L1:
        out = np.sign(y) * np.maximum(np.abs(y) - xi, 0.0)
    elif kind is PenaltyKind.L0:
        out = np.where(np.abs(y) > math.sqrt(2.0 * xi), y, 0.0)
    else:
        out = np.vectorize(lambda t: _custom_prox_scalar(penalty.func, t, xi), otypes=[float])(y)
    return out if out.ndim else float(out)


def moreau(penalty: PenaltySpec, y, xi: float):
    """Moreau envelope ``min_v (y - v)**2 / (2 xi) + u(v)`` and its minimizer."""
    g = prox(penalty, y, xi)
    m = (np.asarray(y) - g) ** 2 / (2.0 * xi) + penalty_value(penalty, g)
    return m, g


def rsb_objective(penalty: PenaltySpec, x, z, y, params: ChannelParams, v):
    """``K = [(x - v)**2 + 2 (x - v)(f z + w y)] / (2 xi) + u(v)``.

    This differs from the completed-square prox objective at input
    ``x + f z + w y`` by ``-(f z + w y)**2 / (2 xi)``; the offset depends on
    ``y`` and is kept because it shapes the tilted measure.
    """
    h = params.f * np.asarray(z, dtype=float) + params.w * np.asarray(y, dtype=float)
    e = np.asarray(x, dtype=float) - np.asarray(v, dtype=float)
    return (e * e + 2.0 * e * h) / (2.0 * params.xi) + penalty_value(penalty, v)


def rsb_minimize(penalty: PenaltySpec, x, z, y, params: ChannelParams):
    """Return ``(L, g)`` with ``g = argmin_v K`` and ``L = K(g)``."""
    t = np.asarray(x, dtype=float) + params.f * np.asarray(z, dtype=float) + params.w * np.asarray(y, dtype=float)
    g = prox(penalty, t, params.xi)
    return rsb_objective(penalty, x, z, y, params, g), g


def prior_nodes(prior: SourcePrior, n: int = DEFAULT_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Support points and probabilities of the quadrature version of the prior."""
    z, w = hermite_rule(n)
    s = prior.sparsity
    return np.concatenate([[0.0], z]), np.concatenate([[1.0 - s], s * w])


def prior_average(prior: SourcePrior, h, n: int = DEFAULT_NODES) -> float:
    """``(1 - s) h(0) + s int h(x) Dx``; ``h`` is called on an array."""
    xs, px = prior_nodes(prior, n)
    vals = np.broadcast_to(np.asarray(h(xs), dtype=float), xs.shape)
    if not np.all(np.isfinite(vals[px > 0])):
        raise NonFiniteError("prior average integrand is non-finite")
    return float(np.dot(px[px > 0], vals[px > 0]))
