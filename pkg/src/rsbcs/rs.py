"""Replica-symmetric fixed point of the decoupled channel.

Given ``(chi, q)`` the channel parameters are

    xi  = lam / R(-chi / lam)
    f^2 = d/dchi[(lam0 chi - lam q) R(-chi / lam)] / R(-chi / lam)^2

and the fixed-point map is

    chi' = (xi / f) E int (g - x) z Dz,    q' = E int (g - x)^2 Dz

with ``g = prox(x + f z, xi)``.  The distortion is ``E int d(g; x) Dz``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .ensemble import EnsembleKind, EnsembleSpec, r_transform
from .errors import ConfigError, DomainError, InvalidNegativeDiscriminant, NonFiniteError, StateError
from .quadrature import DEFAULT_NODES, split_rule, hermite_rule
from .scalar import PenaltySpec, SourcePrior, kinks, prox

Distortion = Callable[[np.ndarray, np.ndarray], np.ndarray]

# iterates beyond this are treated as divergent
_BLOWUP = 1e8


def squared_error(xhat, x):
    return (xhat - x) ** 2


@dataclass(frozen=True)
class SystemConfig:
    """Sampling system and reconstruction scheme.

    ``distortion`` maps ``(xhat, x)`` arrays to per-entry distortion; ``None``
    means squared error.
    """

    ensemble: EnsembleSpec
    penalty: PenaltySpec
    prior: SourcePrior
    lam: float
    lam0: float
    distortion: Optional[Distortion] = None

    def __post_init__(self):
        lam, lam0 = float(self.lam), float(self.lam0)
        if not (math.isfinite(lam) and lam > 0):
            raise ConfigError(f"lambda must be positive, got {self.lam!r}")
        if not (math.isfinite(lam0) and lam0 >= 0):
            raise ConfigError(f"lambda0 must be non-negative, got {self.lam0!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "lam0", lam0)

    @property
    def rate(self) -> float:
        return self.ensemble.rate

    @property
    def squared_error(self) -> bool:
        return self.distortion is None

    def distortion_fn(self) -> Distortion:
        return squared_error if self.distortion is None else self.distortion

    def with_lambda(self, lam: float) -> "SystemConfig":
        return replace(self, lam=lam)


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    NO_SOLUTION = "NoSolution"
    INVALID_NEGATIVE_DISCRIMINANT = "InvalidNegativeDiscriminant"
    MAX_ITERS_EXCEEDED = "MaxItersExceeded"
    MU_ROOT_NOT_BRACKETED = "MuRootNotBracketed"


# RS solutions never carry the last member
RsStatus = Status


@dataclass(frozen=True)
class RsOptions:
    damping: float = 0.5
    tol: float = 1e-10
    max_iters: int = 10_000
    init: Optional[tuple[float, float]] = None
    n: int = DEFAULT_NODES
    gate: bool = True
    min_damping: float = 1.0 / 64

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise ConfigError(f"damping must lie in (0, 1], got {self.damping!r}")
        if self.tol <= 0 or self.max_iters < 1 or self.n < 2:
            raise ConfigError("tol, max_iters and n must be positive (n >= 2)")


@dataclass(frozen=True)
class RsFixedPoint:
    chi: float
    q: float
    xi: float
    f: float
    D: float
    iterations: int
    residual: float


@dataclass(frozen=True)
class RsSolution:
    """Outcome of :func:`solve_rs`.

    The top-level fields describe the fixed point with the smallest
    distortion; ``fixed_points`` lists every distinct fixed point found.
    ``quad_delta`` is ``|D(2N) - D(N)|`` at the reported point when the
    accuracy gate ran, else NaN.
    """

    chi: float
    q: float
    xi: float
    f: float
    D: float
    status: Status
    iterations: int
    residual: float
    fixed_points: tuple[RsFixedPoint, ...] = ()
    quad_delta: float = math.nan
    n: int = DEFAULT_NODES
    start_status: tuple[Status, ...] = field(default=(), repr=False)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def _r_and_slope(ens: EnsembleSpec, lam: float, chi: float) -> tuple[float, float]:
    """``R(-chi / lam)`` and its derivative with respect to ``chi``."""
    R = r_transform(ens, -chi / lam)
    if ens.kind is EnsembleKind.IID:
        return R, -ens.rate * R * R / lam
    h = max(1e-6, 1e-6 * chi)
    if chi - h >= 0.0:
        d = (r_transform(ens, -(chi + h) / lam) - r_transform(ens, -(chi - h) / lam)) / (2.0 * h)
    else:
        # second-order one-sided difference at the boundary
        r1 = r_transform(ens, -(chi + h) / lam)
        r2 = r_transform(ens, -(chi + 2.0 * h) / lam)
        d = (-3.0 * R + 4.0 * r1 - r2) / (2.0 * h)
    return R, d


def rs_effective_params(cfg: SystemConfig, chi: float, q: float) -> tuple[float, float]:
    """Return ``(xi, f)`` at the state ``(chi, q)``.

    Raises :class:`InvalidNegativeDiscriminant` when ``f^2 < 0``.
    """
    if not chi >= 0:
        raise DomainError(f"chi must be non-negative, got {chi!r}")
    lam, lam0 = cfg.lam, cfg.lam0
    ens = cfg.ensemble
    if ens.kind is EnsembleKind.IID:
        r = ens.rate
        xi = lam + r * chi
        f2 = lam0 + r * q
    else:
        R, dR = _r_and_slope(ens, lam, chi)
        xi = lam / R
        f2 = (lam0 * R + (lam0 * chi - lam * q) * dR) / (R * R)
    if not math.isfinite(f2):
        raise NonFiniteError(f"f^2 is not finite at chi={chi!r}, q={q!r}")
    if f2 < 0:
        raise InvalidNegativeDiscriminant(f"f^2 = {f2:.6g} < 0 at chi={chi!r}, q={q!r}")
    return xi, math.sqrt(f2)


def channel_nodes(prior: SourcePrior, breaks, f: float, n: int, fold: bool = False):
    """Joint nodes ``(X, Z, W)`` for ``x ~ prior`` and ``z ~ N(0, 1)``.

    Integrands depend on ``(x, z)`` mostly through the channel input
    ``t = x + f z``, which is non-smooth at ``breaks``.  For the atom at 0
    the z-line is split at ``breaks / f``.  For the Gaussian part ``t`` is
    integrated first with a split rule for ``N(0, 1 + f^2)`` and ``x`` given
    ``t`` with a Hermite rule; the conditional law is smooth in ``x``.

    With ``fold`` the rule keeps only nodes with ``t >= 0`` (doubling their
    weight), which is exact for integrands invariant under
    ``(x, z) -> (-x, -z)``; ``breaks`` must then be symmetric.
    """
    s = prior.sparsity
    zh, wh = hermite_rule(n)
    breaks = np.asarray(breaks, dtype=float)
    parts = []
    if s < 1.0:
        if breaks.size and f > 0:
            z0, w0 = split_rule(breaks / f, n)
        else:
            z0, w0 = zh, wh
        parts.append((np.zeros_like(z0), z0, (1.0 - s) * w0))
    if s > 0.0:
        if f == 0.0:
            X, Z = np.meshgrid(zh, zh, indexing="ij")
            W = np.outer(wh, wh)
        else:
            v = f * f / (1.0 + f * f)
            if breaks.size:
                t, wt = split_rule(breaks, n, scale=math.sqrt(1.0 + f * f))
            else:
                t, wt = math.sqrt(1.0 + f * f) * zh, wh
            X = t[:, None] / (1.0 + f * f) + math.sqrt(v) * zh[None, :]
            Z = (t[:, None] - X) / f
            W = wt[:, None] * wh[None, :]
        parts.append((X.ravel(), Z.ravel(), s * W.ravel()))
    X, Z, W = (np.concatenate(a) for a in zip(*parts))
    keep = W > 0
    X, Z, W = X[keep], Z[keep], W[keep]
    if fold:
        T = X + f * Z
        # the split rules are mirror images, so t is exactly symmetric
        W = np.where(T > 0, 2.0 * W, W)
        keep = T >= 0
        X, Z, W = X[keep], Z[keep], W[keep]
    return X, Z, W


def _foldable(cfg: SystemConfig) -> bool:
    # built-in penalties have odd prox maps; squared error is even
    return cfg.penalty.builtin and cfg.squared_error


def _channel_average(cfg: SystemConfig, xi: float, f: float, n: int, with_distortion: bool = True):
    """Return ``(E z (g - x), E (g - x)^2, D)`` for the scalar channel."""
    X, Z, W = channel_nodes(cfg.prior, kinks(cfg.penalty, xi), f, n, fold=_foldable(cfg))
    g = prox(cfg.penalty, X + f * Z, xi)
    e = g - X
    ez = float(W @ (e * Z))
    ee = float(W @ (e * e))
    if not with_distortion:
        D = math.nan
    elif cfg.squared_error:
        D = ee
    else:
        d = np.broadcast_to(np.asarray(cfg.distortion_fn()(g, X), dtype=float), g.shape)
        D = float(W @ d)
    if not (math.isfinite(ez) and math.isfinite(ee)) or (with_distortion and not math.isfinite(D)):
        raise NonFiniteError("channel average is non-finite")
    return ez, ee, D


def rs_iterate(cfg: SystemConfig, state: tuple[float, float], n: int = DEFAULT_NODES) -> tuple[float, float]:
    """One application of the fixed-point map to ``(chi, q)``."""
    chi, q = state
    xi, f = rs_effective_params(cfg, chi, q)
    ez, ee, _ = _channel_average(cfg, xi, f, n, with_distortion=False)
    if f == 0.0:
        # Stein's identity, z-average of a constant input
        return 0.0, ee
    return xi / f * ez, ee


def _iterate_from(cfg, start, opts: RsOptions):
    """Damped iteration from one start.  Returns (status, chi, q, iters, residual)."""
    chi, q = float(start[0]), float(start[1])
    alpha = opts.damping
    prev_sign = None
    flips = 0
    res = math.inf
    for it in range(1, opts.max_iters + 1):
        try:
            chi_n, q_n = rs_iterate(cfg, (max(chi, 0.0), q), opts.n)
        except InvalidNegativeDiscriminant:
            return Status.INVALID_NEGATIVE_DISCRIMINANT, chi, q, it, res
        except (DomainError, NonFiniteError):
            return Status.NO_SOLUTION, chi, q, it, res
        dchi, dq = chi_n - chi, q_n - q
        res = max(abs(dchi), abs(dq))
        if not math.isfinite(res) or abs(chi_n) > _BLOWUP or abs(q_n) > _BLOWUP:
            return Status.NO_SOLUTION, chi, q, it, res
        if res < opts.tol:
            chi, q = chi_n, q_n
            if chi < 0 or q < 0:
                return Status.NO_SOLUTION, chi, q, it, res
            return Status.CONVERGED, chi, q, it, res
        sign = (dchi > 0, dq > 0)
        if prev_sign is not None and sign[0] != prev_sign[0]:
            flips += 1
            if flips >= 6 and alpha > opts.min_damping:
                alpha = max(alpha / 2.0, opts.min_damping)
                flips = 0
        else:
            flips = 0
        prev_sign = sign
        chi = (1.0 - alpha) * chi + alpha * chi_n
        q = (1.0 - alpha) * q + alpha * q_n
    return Status.MAX_ITERS_EXCEEDED, chi, q, opts.max_iters, res


def _starts(cfg: SystemConfig, opts: RsOptions):
    s = cfg.prior.sparsity
    starts = [] if opts.init is None else [tuple(opts.init)]
    starts += [(0.1, 0.1), (1.0, 1.0), (1e-3, s)]
    return starts


def _failure_status(statuses) -> Status:
    if Status.INVALID_NEGATIVE_DISCRIMINANT in statuses:
        return Status.INVALID_NEGATIVE_DISCRIMINANT
    if Status.MAX_ITERS_EXCEEDED in statuses:
        return Status.MAX_ITERS_EXCEEDED
    return Status.NO_SOLUTION


def solve_rs(cfg: SystemConfig, options: Optional[RsOptions] = None) -> RsSolution:
    """Multi-start damped iteration of the RS map.

    Physics-level failures (no fixed point, negative discriminant, iteration
    budget) are reported through ``status``; nothing is raised for them.
    """
    opts = options or RsOptions()
    found: list[RsFixedPoint] = []
    statuses = []
    total = 0
    for start in _starts(cfg, opts):
        st, chi, q, its, res = _iterate_from(cfg, start, opts)
        total += its
        statuses.append(st)
        if st is not Status.CONVERGED:
            continue
        if any(abs(fp.chi - chi) <= 1e-6 and abs(fp.q - q) <= 1e-6 for fp in found):
            continue
        xi, f = rs_effective_params(cfg, chi, q)
        _, _, D = _channel_average(cfg, xi, f, opts.n)
        found.append(RsFixedPoint(chi, q, xi, f, D, its, res))
    if not found:
        return RsSolution(
            math.nan, math.nan, math.nan, math.nan, math.nan, _failure_status(statuses), total, math.nan,
            (), math.nan, opts.n, tuple(statuses),
        )
    found.sort(key=lambda fp: fp.D)
    best = found[0]
    delta = math.nan
    if opts.gate:
        _, _, D2 = _channel_average(cfg, best.xi, best.f, 2 * opts.n)
        delta = abs(D2 - best.D)
    return RsSolution(
        best.chi, best.q, best.xi, best.f, best.D, Status.CONVERGED, total, best.residual,
        tuple(found), delta, opts.n, tuple(statuses),
    )


def rs_distortion(cfg: SystemConfig, solution: RsSolution, n: Optional[int] = None) -> float:
    """Recompute ``D`` from the order parameters of a converged solution."""
    if solution.status is not Status.CONVERGED:
        raise StateError(f"solution is not converged (status {solution.status.value})")
    xi, f = rs_effective_params(cfg, solution.chi, solution.q)
    return _channel_average(cfg, xi, f, n or solution.n)[2]


def rs_residual(cfg: SystemConfig, chi: float, q: float, n: int = DEFAULT_NODES) -> float:
    """``max |map(chi, q) - (chi, q)|``."""
    chi_n, q_n = rs_iterate(cfg, (chi, q), n)
    return max(abs(chi_n - chi), abs(q_n - q))
