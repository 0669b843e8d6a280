"""One-step replica symmetry breaking fixed point.

Order parameters ``(chi, q, p, mu)`` with ``rho = chi + mu p``.  The channel
parameters are

    xi  = lam / R_chi
    f^2 = d/drho[(lam0 rho + lam p - lam q) R(-rho / lam)] / R_chi^2
    w^2 = (lam / mu) (R_chi - R_rho) / R_chi^2

with ``R_c = R(-c / lam)``.  With ``h = f z + w y`` the objective is
``K(v) = [(x - v)^2 + 2 (x - v) h] / (2 xi) + u(v)``; its minimum is
``L = M(x + h) - h^2 / (2 xi)`` where ``M`` is the Moreau envelope, and the
tilted measure is ``I = exp(-mu L) / int exp(-mu L) Dy``.

The y-integral is done by completing the square:
``exp(mu h^2 / (2 xi)) phi(y)`` is a Gaussian in ``y`` with precision
``a = 1 - mu w^2 / xi`` and mean ``c = mu f w z / (xi a)``, so the inner
rule is a split Legendre rule for ``N(c, 1/a)`` weighted by
``exp(-mu M)``.  A state with ``a <= 0`` has no normalizable tilt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .ensemble import EnsembleKind, r_integral, r_transform
from .errors import (
    ConfigError,
    DomainError,
    InvalidNegativeDiscriminant,
    MuRootNotBracketed,
    NonFiniteError,
    StateError,
)
from .quadrature import TAIL, hermite_rule, legendre_rule, split_nodes
from .rs import RsOptions, Status, SystemConfig, _r_and_slope, channel_nodes, solve_rs
from .scalar import ChannelParams, PenaltyKind, kinks, penalty_value, prox

_LOG_2PI = math.log(2.0 * math.pi)
# nodes per segment; the split rules use 11 segments on the outer axis and
# up to 5 on the inner one, so this is well above 96 nodes per axis
RSB_NODES = 48
# below this w the (chi + mu q)-equation is replaced by its RS limit
W_DEGENERATE = 1e-12
_PCODE = {PenaltyKind.L2: 0, PenaltyKind.L1: 1, PenaltyKind.L0: 2}


@dataclass(frozen=True)
class RsbParams:
    xi: float
    f: float
    w: float
    mu: float

    @property
    def a(self) -> float:
        return 1.0 - self.mu * self.w * self.w / self.xi

    @property
    def channel(self) -> ChannelParams:
        return ChannelParams(self.xi, self.f, self.w)


@dataclass(frozen=True)
class RsbMoments:
    """Averages over ``x``, ``z`` and the tilted ``y``-measure.

    ``ez = E z <g - x>``, ``ey = E <(g - x) y>``, ``ee = E <(g - x)^2>``,
    ``ent = E <log I>`` and ``D = E <d(g; x)>``.
    """

    ez: float
    ey: float
    ee: float
    ent: float
    D: float


@dataclass(frozen=True)
class RsbOptions:
    damping: float = 0.5
    tol: float = 1e-8
    max_iters: int = 2000
    n: int = RSB_NODES
    n_coarse: int = 16
    mu_scan: tuple[float, ...] = tuple(float(v) for v in np.geomspace(0.05, 100.0, 23))
    init: Optional[tuple[float, float, float, float]] = None
    gate: bool = False
    p_rel_min: float = 1e-4
    min_damping: float = 1.0 / 64

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise ConfigError(f"damping must lie in (0, 1], got {self.damping!r}")
        if self.n < 2 or self.n_coarse < 2:
            raise ConfigError("node counts must be at least 2")
        scan = tuple(float(v) for v in self.mu_scan)
        if not scan or any(v <= 0 for v in scan) or any(b <= a for a, b in zip(scan, scan[1:])):
            raise ConfigError("mu_scan must be a non-empty increasing list of positive values")
        object.__setattr__(self, "mu_scan", scan)


@dataclass(frozen=True)
class RsbSolution:
    chi: float
    q: float
    p: float
    mu: float
    xi: float
    f: float
    w: float
    D: float
    status: Status
    iterations: int
    residual: float
    mu_brackets: tuple[tuple[float, float], ...] = ()
    quad_delta: float = math.nan
    n: int = RSB_NODES

    @property
    def rho(self) -> float:
        return self.chi + self.mu * self.p

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def rsb_effective_params(cfg: SystemConfig, chi: float, q: float, p: float, mu: float) -> RsbParams:
    """Return ``(xi, f, w)`` (and ``mu``) at the given order parameters."""
    if not chi >= 0:
        raise DomainError(f"chi must be non-negative, got {chi!r}")
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu!r}")
    rho = chi + mu * p
    if not rho >= 0:
        raise DomainError(f"rho = chi + mu p must be non-negative, got {rho!r}")
    lam, lam0 = cfg.lam, cfg.lam0
    ens = cfg.ensemble
    if ens.kind is EnsembleKind.IID:
        r = ens.rate
        xi = lam + r * chi
        ratio = (lam + r * chi) / (lam + r * rho)
        f2 = (lam0 + r * (q - p)) * ratio * ratio
        w2 = r * p * ratio
    else:
        Rc = r_transform(ens, -chi / lam)
        Rr, dRr = _r_and_slope(ens, lam, rho)
        xi = lam / Rc
        f2 = (lam0 * Rr + (lam0 * rho + lam * p - lam * q) * dRr) / (Rc * Rc)
        w2 = 0.0 if p == 0 else (lam / mu) * (Rc - Rr) / (Rc * Rc)
    if not (math.isfinite(f2) and math.isfinite(w2)):
        raise NonFiniteError(f"non-finite channel parameters at chi={chi!r}, q={q!r}, p={p!r}, mu={mu!r}")
    if f2 < 0 or w2 < 0:
        raise InvalidNegativeDiscriminant(f"f^2 = {f2:.6g}, w^2 = {w2:.6g} at chi={chi!r}, q={q!r}, p={p!r}")
    return RsbParams(xi, math.sqrt(f2), math.sqrt(w2), float(mu))


def _check_tilt(params: RsbParams) -> float:
    a = params.a
    if not a > 0:
        raise DomainError(f"tilted measure is not normalizable (1 - mu w^2 / xi = {a:.6g})")
    return a


@numba.njit(cache=True)
def _prox_code(pcode, t, xi, thr):
    if pcode == 0:
        g = t / (1.0 + xi)
        return g, 0.5 * g * g
    if pcode == 1:
        at = abs(t)
        if at <= xi:
            return 0.0, 0.0
        g = t - xi if t > 0 else t + xi
        return g, abs(g)
    if abs(t) > thr:
        return t, 1.0
    return 0.0, 0.0


@numba.njit(cache=True)
def _moments_kernel(X, Z, W, xi, f, w, mu, a, pcode, thr, split, offs, lt, lw, ht, hw, tail):
    sd = 1.0 / math.sqrt(a)
    ccoef = mu * f * w / (xi * a)
    n = lt.size
    nb = 2 + offs.size
    cap = (nb + 1) * n
    ylog = np.empty(cap)
    yy = np.empty(cap)
    gg = np.empty(cap)
    LL = np.empty(cap)
    edges = np.empty(nb + 2)
    out = np.zeros(4)
    for i in range(X.size):
        x = X[i]
        z = Z[i]
        t0 = x + f * z
        c = ccoef * z
        fz = f * z
        m = -np.inf
        cnt = 0
        if not split:
            for j in range(ht.size):
                y = c + sd * ht[j]
                g, u = _prox_code(pcode, t0 + w * y, xi, thr)
                d = t0 + w * y - g
                M = d * d / (2.0 * xi) + u
                h = fz + w * y
                lv = math.log(hw[j]) - mu * M
                ylog[cnt] = lv
                yy[cnt] = y
                gg[cnt] = g
                LL[cnt] = M - h * h / (2.0 * xi)
                if lv > m:
                    m = lv
                cnt += 1
            base = math.log(sd) + 0.5 * _LOG_2PI
        else:
            lo = c - tail * sd
            hi = c + tail * sd
            edges[0] = lo
            edges[1] = min(max((-thr - t0) / w, lo), hi)
            edges[2] = min(max((thr - t0) / w, lo), hi)
            for k in range(offs.size):
                edges[3 + k] = c + offs[k] * sd
            edges[nb + 1] = hi
            edges.sort()
            for sgi in range(nb + 1):
                half = 0.5 * (edges[sgi + 1] - edges[sgi])
                if half <= 0.0:
                    continue
                mid = 0.5 * (edges[sgi + 1] + edges[sgi])
                lhalf = math.log(half)
                for j in range(n):
                    y = mid + half * lt[j]
                    g, u = _prox_code(pcode, t0 + w * y, xi, thr)
                    d = t0 + w * y - g
                    M = d * d / (2.0 * xi) + u
                    h = fz + w * y
                    dy = y - c
                    lv = lhalf + math.log(lw[j]) - 0.5 * a * dy * dy - mu * M
                    ylog[cnt] = lv
                    yy[cnt] = y
                    gg[cnt] = g
                    LL[cnt] = M - h * h / (2.0 * xi)
                    if lv > m:
                        m = lv
                    cnt += 1
            base = 0.0
        S = 0.0
        s1 = 0.0
        s2 = 0.0
        sy = 0.0
        sL = 0.0
        for k in range(cnt):
            pk = math.exp(ylog[k] - m)
            e = gg[k] - x
            S += pk
            s1 += pk * e
            s2 += pk * e * e
            sy += pk * e * yy[k]
            sL += pk * LL[k]
        s1 /= S
        s2 /= S
        sy /= S
        sL /= S
        k0 = mu * fz * fz / (2.0 * xi) + 0.5 * a * c * c
        logZ = k0 + base + m + math.log(S) - 0.5 * _LOG_2PI
        wi = W[i]
        out[0] += wi * z * s1
        out[1] += wi * sy
        out[2] += wi * s2
        out[3] += wi * (-mu * sL - logZ)
    return out


_Y_OFFSETS = np.array([-4.0, 4.0])


def _inner_rule(cfg: SystemConfig, params: RsbParams, z: np.ndarray, t0: np.ndarray, n: int):
    """Inner y-nodes and log-weights (with respect to dy) per outer node.

    The weights carry ``exp(-a (y - c)^2 / 2)`` but not the ``exp(-mu M)``
    factor.
    """
    a = params.a
    sd = 1.0 / math.sqrt(a)
    c = params.mu * params.f * params.w * z / (params.xi * a)
    ks = kinks(cfg.penalty, params.xi) if params.w > 0 else ()
    if ks:
        cols = [(k - t0) / params.w for k in ks] + [c + o * sd for o in _Y_OFFSETS]
        breaks = np.stack(cols, axis=-1)
        Y, logw = split_nodes(breaks, n, center=c, scale=sd)
        # split_nodes includes the normal density; convert to dy-weights
        logw = logw + 0.5 * _LOG_2PI + math.log(sd)
    else:
        ht, hw = hermite_rule(n)
        Y = c[:, None] + sd * ht[None, :]
        logw = np.broadcast_to(np.log(hw) + math.log(sd) + 0.5 * _LOG_2PI, Y.shape)
    return Y, logw, c


def _outer_breaks(ks, params: RsbParams):
    """Breakpoints for the channel input ``t = x + f z``.

    Averaging over the tilted ``y`` smooths each kink of the prox map into a
    layer of width ``w / sqrt(a)`` around it; when ``w`` is small the layer
    is resolved by grading the split rule towards the kink.
    """
    if not ks or params.w == 0.0:
        return ks
    d = params.w / math.sqrt(params.a)
    return tuple(k + m * d for k in ks for m in (-6.0, -2.0, 0.0, 2.0, 6.0))


def _moments_numpy(cfg: SystemConfig, params: RsbParams, X, Z, W, n: int, chunk: int = 512):
    """Reference evaluation of the moments for arbitrary penalties and distortions."""
    xi, f, w, mu = params.xi, params.f, params.w, params.mu
    a = _check_tilt(params)
    dist = cfg.distortion_fn()
    acc = np.zeros(5)
    for lo in range(0, X.size, chunk):
        x = X[lo:lo + chunk]
        z = Z[lo:lo + chunk]
        t0 = x + f * z
        Y, logw, c = _inner_rule(cfg, params, z, t0, n)
        T = t0[:, None] + w * Y
        g = prox(cfg.penalty, T, xi)
        M = (T - g) ** 2 / (2.0 * xi) + penalty_value(cfg.penalty, g)
        H = f * z[:, None] + w * Y
        L = M - H * H / (2.0 * xi)
        lv = logw - mu * M
        lse = logsumexp(lv, axis=1, keepdims=True)
        P = np.exp(lv - lse)
        e = g - x[:, None]
        k0 = mu * (f * z) ** 2 / (2.0 * xi) + 0.5 * a * c * c
        logZ = k0 + lse[:, 0] - 0.5 * _LOG_2PI
        d = np.broadcast_to(np.asarray(dist(g, x[:, None]), dtype=float), g.shape)
        wt = W[lo:lo + chunk]
        acc[0] += wt @ (z * (P * e).sum(1))
        acc[1] += wt @ (P * e * Y).sum(1)
        acc[2] += wt @ (P * e * e).sum(1)
        acc[3] += wt @ (-mu * (P * L).sum(1) - logZ)
        acc[4] += wt @ (P * d).sum(1)
    return acc


def rsb_moments(cfg: SystemConfig, params: RsbParams, n: int = RSB_NODES, reference: bool = False) -> RsbMoments:
    """All averages entering the fixed-point and ``mu`` equations."""
    a = _check_tilt(params)
    ks = kinks(cfg.penalty, params.xi)
    fast = cfg.penalty.builtin and not reference
    X, Z, W = channel_nodes(cfg.prior, _outer_breaks(ks, params), params.f, n, fold=fast and cfg.squared_error)
    if fast:
        lt, lw = legendre_rule(n)
        ht, hw = hermite_rule(n)
        split = bool(ks) and params.w > 0
        thr = ks[1] if ks else 0.0
        out = _moments_kernel(
            X, Z, W, params.xi, params.f, params.w, params.mu, a, _PCODE[cfg.penalty.kind], thr, split,
            _Y_OFFSETS, lt, lw, ht, hw, TAIL,
        )
        ez, ey, ee, ent = (float(v) for v in out)
        if cfg.squared_error:
            D = ee
        else:
            D = float(_moments_numpy(cfg, params, X, Z, W, n)[4])
    else:
        ez, ey, ee, ent, D = (float(v) for v in _moments_numpy(cfg, params, X, Z, W, n))
    vals = (ez, ey, ee, ent, D)
    if not all(math.isfinite(v) for v in vals):
        raise NonFiniteError("1RSB averages are non-finite")
    return RsbMoments(*vals)


def tilted_measure_weight(cfg: SystemConfig, params: RsbParams, x: float, z: float, y, n: int = RSB_NODES):
    """``I(x, z, y) = exp(-mu L(y)) / int exp(-mu L(y')) Dy'`` (density against Dy)."""
    _check_tilt(params)
    xi, f, w, mu = params.xi, params.f, params.w, params.mu
    if w == 0.0:
        return np.ones_like(np.asarray(y, dtype=float)) if np.ndim(y) else 1.0
    z_arr = np.array([float(z)])
    t0 = float(x) + f * z_arr
    Y, logw, c = _inner_rule(cfg, params, z_arr, t0, n)
    T = t0[:, None] + w * Y
    g = prox(cfg.penalty, T, xi)
    M = (T - g) ** 2 / (2.0 * xi) + penalty_value(cfg.penalty, g)
    a = params.a
    k0 = mu * (f * z_arr[0]) ** 2 / (2.0 * xi) + 0.5 * a * c[0] ** 2
    logZ = k0 + logsumexp(logw[0] - mu * M[0]) - 0.5 * _LOG_2PI
    yv = np.asarray(y, dtype=float)
    h = f * float(z) + w * yv
    tv = float(x) + h
    gv = prox(cfg.penalty, tv, xi)
    Lv = (tv - gv) ** 2 / (2.0 * xi) + penalty_value(cfg.penalty, gv) - h * h / (2.0 * xi)
    if not np.all(np.isfinite(Lv)):
        raise NonFiniteError("L is non-finite")
    out = np.exp(-mu * Lv - logZ)
    return out if np.ndim(out) else float(out)


def _update(cfg: SystemConfig, state, mu: float, n: int):
    chi, q, p = state
    params = rsb_effective_params(cfg, chi, q, p, mu)
    mom = rsb_moments(cfg, params, n)
    if params.f == 0.0:
        raise DomainError("outer noise amplitude vanished; the rho-equation is undefined")
    rho_n = params.xi / params.f * mom.ez
    q_n = mom.ee
    if params.w < W_DEGENERATE:
        return (rho_n, q_n, 0.0), params, mom
    chi_n = params.xi / params.w * mom.ey - mu * q_n
    return (chi_n, q_n, (rho_n - chi_n) / mu), params, mom


def rsb_iterate(cfg: SystemConfig, state, mu: float, n: int = RSB_NODES):
    """One application of the fixed-point map to ``(chi, q, p)`` at fixed ``mu``."""
    return _update(cfg, state, mu, n)[0]


def mu_residual(cfg: SystemConfig, state, mu: float, n: int = RSB_NODES) -> float:
    """Right side minus left side of the ``mu`` equation at ``(chi, q, p)``."""
    chi, q, p = state
    params = rsb_effective_params(cfg, chi, q, p, mu)
    mom = rsb_moments(cfg, params, n)
    return _mu_residual_from(cfg, state, params, mom)


def _mu_residual_from(cfg, state, params: RsbParams, mom: RsbMoments) -> float:
    chi, q, p = state
    mu, xi = params.mu, params.xi
    integ = r_integral(cfg.ensemble, cfg.lam, chi, chi + mu * p)
    rhs = integ / (2.0 * cfg.lam) + mu * mu * params.w ** 2 / (2.0 * xi * xi) * (p - q) + mom.ent
    return rhs - mu * p / (2.0 * xi)


def solve_mu(
    cfg: SystemConfig,
    state,
    n: int = RSB_NODES,
    grid: Optional[Sequence[float]] = None,
    all_brackets: Optional[list] = None,
) -> float:
    """Smallest root in ``mu`` of the ``mu`` equation at fixed ``(chi, q, p)``.

    Grid points where the state is invalid are skipped.  Raises
    :class:`MuRootNotBracketed` when no sign change is found.  At ``p = 0``
    the equation holds for every ``mu`` and 1 is returned.
    """
    chi, q, p = state
    if p == 0.0:
        return 1.0
    if not p > 0:
        raise DomainError(f"p must be non-negative, got {p!r}")
    grid = np.geomspace(1e-4, 1e4, 64) if grid is None else np.asarray(grid, dtype=float)

    def res(mu):
        try:
            return mu_residual(cfg, state, mu, n)
        except (DomainError, InvalidNegativeDiscriminant, NonFiniteError):
            return math.nan

    vals = np.array([res(m) for m in grid])
    brackets = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if math.isfinite(a) and math.isfinite(b) and (a == 0.0 or a * b < 0):
            brackets.append((float(grid[i]), float(grid[i + 1])))
    if all_brackets is not None:
        all_brackets.extend(brackets)
    if not brackets:
        raise MuRootNotBracketed(f"no sign change of the mu equation on [{grid[0]:g}, {grid[-1]:g}]")
    lo, hi = brackets[0]
    if res(lo) == 0.0:
        return lo
    return optimize.brentq(res, lo, hi, rtol=1e-10, xtol=1e-14 * lo)


def rsb_distortion(cfg: SystemConfig, state, mu: float, n: int = RSB_NODES) -> float:
    """``E int d(g; x) I Dy Dz`` at the given order parameters."""
    chi, q, p = state
    params = rsb_effective_params(cfg, chi, q, p, mu)
    return rsb_moments(cfg, params, n).D


# ---------------------------------------------------------------------------
# driver


@dataclass
class _Inner:
    status: Status
    state: tuple
    iterations: int
    residual: float
    collapsed: bool = False


def _degenerate(state, opts: RsbOptions) -> bool:
    """p is negligible against q: the state sits on the RS branch."""
    return state[2] <= max(opts.p_rel_min * state[1], 1e-12)


def _small(state, delta, tol) -> bool:
    """Convergence test; the p-step is judged relative to p / q.

    Near ``p = 0`` the p-map is a slow contraction, so an absolute test
    would accept any small p.
    """
    chi, q, p = state
    scale = min(1.0, p / q) if q > 0 and p > 0 else 1.0
    return abs(delta[0]) < tol and abs(delta[1]) < tol and abs(delta[2]) < tol * scale


def _fixed_mu(cfg, start, mu, n, opts: RsbOptions) -> _Inner:
    """Fixed point of the (chi, q, p) map at fixed mu.

    A quasi-Newton solve from ``start`` is tried first; if it fails or lands
    on the ``p = 0`` branch the damped iteration takes over.
    """
    fast = _fixed_mu_newton(cfg, start, mu, n, opts)
    if fast is not None:
        return fast
    return _fixed_mu_damped(cfg, start, mu, n, opts)


def _fixed_mu_newton(cfg, start, mu, n, opts: RsbOptions):
    if _degenerate(start, opts):
        return None
    bad = np.full(3, 1e3)
    count = [0]

    def fun(v):
        count[0] += 1
        if v[0] < 0 or v[2] < 0:
            return bad
        try:
            new = _update(cfg, tuple(v), mu, n)[0]
        except (DomainError, InvalidNegativeDiscriminant, NonFiniteError):
            return bad
        return np.asarray(new) - v

    sol = optimize.root(fun, np.asarray(start, dtype=float), method="hybr", options={"xtol": 1e-12, "maxfev": 200})
    v = sol.x
    r = fun(v)
    res = float(np.max(np.abs(r)))
    if not (_small(v, r, opts.tol) and v[0] >= 0 and v[1] >= 0):
        return None
    if _degenerate(v, opts):
        return _Inner(Status.CONVERGED, (float(v[0]), float(v[1]), 0.0), count[0], res, collapsed=True)
    return _Inner(Status.CONVERGED, (float(v[0]), float(v[1]), float(v[2])), count[0], res)


def _fixed_mu_damped(cfg, start, mu, n, opts: RsbOptions) -> _Inner:
    """Damped iteration of the (chi, q, p) map at fixed mu."""
    chi, q, p = (float(v) for v in start)
    alpha = opts.damping
    prev = None
    flips = 0
    decay = 0
    res = math.inf
    for it in range(1, opts.max_iters + 1):
        try:
            new, _, _ = _update(cfg, (chi, q, p), mu, n)
        except InvalidNegativeDiscriminant:
            return _Inner(Status.INVALID_NEGATIVE_DISCRIMINANT, (chi, q, p), it, res)
        except (DomainError, NonFiniteError):
            return _Inner(Status.NO_SOLUTION, (chi, q, p), it, res)
        d = (new[0] - chi, new[1] - q, new[2] - p)
        res = max(abs(v) for v in d)
        if not math.isfinite(res) or max(abs(v) for v in new) > 1e8:
            return _Inner(Status.NO_SOLUTION, (chi, q, p), it, res)
        if _small(new, d, opts.tol):
            if new[0] < 0 or new[1] < 0:
                return _Inner(Status.NO_SOLUTION, new, it, res)
            return _Inner(Status.CONVERGED, (new[0], new[1], max(new[2], 0.0)), it, res)
        sign = d[0] > 0
        if prev is not None and sign != prev:
            flips += 1
            if flips >= 6 and alpha > opts.min_damping:
                alpha = max(alpha / 2.0, opts.min_damping)
                flips = 0
        else:
            flips = 0
        prev = sign
        p_old = p
        chi = max((1.0 - alpha) * chi + alpha * new[0], 0.0)
        q = (1.0 - alpha) * q + alpha * new[1]
        p = max((1.0 - alpha) * p + alpha * new[2], 0.0)
        # steady geometric decay of p with the other components settled:
        # the iteration is being attracted to the replica-symmetric branch
        settled = abs(d[0]) < 1e-6 and abs(d[1]) < 1e-6
        decay = decay + 1 if (settled and p < 1e-2 * q and p < 0.999 * p_old) else 0
        if _degenerate((chi, q, p), opts) or decay >= 10:
            return _Inner(Status.CONVERGED, (chi, q, 0.0), it, res, collapsed=True)
    return _Inner(Status.MAX_ITERS_EXCEEDED, (chi, q, p), opts.max_iters, res)


def _joint_residual(cfg, v, n):
    chi, q, p, lmu = v
    mu = math.exp(lmu)
    state = (chi, q, p)
    new, params, mom = _update(cfg, state, mu, n)
    phi = _mu_residual_from(cfg, state, params, mom)
    return np.array([new[0] - chi, new[1] - q, new[2] - p, phi])


def _polish(cfg, state, mu, n, opts: RsbOptions):
    """Joint Newton-type solve of the map and the mu equation."""
    x0 = np.array([state[0], state[1], state[2], math.log(mu)])
    bad = np.full(4, 1e3)

    def fun(v):
        if v[0] < 0 or v[2] <= 0:
            return bad
        try:
            return _joint_residual(cfg, v, n)
        except (DomainError, InvalidNegativeDiscriminant, NonFiniteError):
            return bad

    sol = optimize.root(fun, x0, method="hybr", options={"xtol": 1e-12, "maxfev": 400})
    v = sol.x
    r = fun(v)
    ok = bool(np.all(np.isfinite(r)) and _small(v[:3], r[:3], opts.tol) and abs(r[3]) < opts.tol and v[2] > 0)
    return ok, (float(v[0]), float(v[1]), float(v[2])), float(math.exp(v[3])), int(sol.nfev), float(np.max(np.abs(r)))


def _finish(cfg, state, mu, n, status, iters, residual, brackets=(), gate=False, opts=None):
    params = rsb_effective_params(cfg, *state, mu)
    mom = rsb_moments(cfg, params, n)
    delta = math.nan
    if gate and status is Status.CONVERGED:
        if state[2] > 0:
            ok, st2, mu2, _, _ = _polish(cfg, state, mu, 2 * n, opts)
            if ok:
                delta = abs(rsb_distortion(cfg, st2, mu2, 2 * n) - mom.D)
        else:
            delta = abs(rsb_distortion(cfg, state, mu, 2 * n) - mom.D)
    return RsbSolution(
        state[0], state[1], state[2], mu, params.xi, params.f, params.w, mom.D, status, iters, residual,
        tuple(brackets), delta, n,
    )


def _failed(status, iters, n, brackets=()):
    nan = math.nan
    return RsbSolution(nan, nan, nan, nan, nan, nan, nan, nan, status, iters, nan, tuple(brackets), nan, n)


def solve_1rsb(cfg: SystemConfig, options: Optional[RsbOptions] = None) -> RsbSolution:
    """Solve the 1RSB system.

    ``mu`` is located as the smallest sign change of the ``mu`` equation
    along the curve of fixed points at fixed ``mu``, scanned on a coarse
    grid with continuation; the root is then polished jointly at the full
    node count.  When the scan finds no sign change and the RS system has a
    solution, that solution is returned with ``p = 0, mu = 1``.
    """
    opts = options or RsbOptions()
    n, nc = opts.n, opts.n_coarse
    total = 0

    if opts.init is not None and opts.init[2] > 0:
        chi, q, p, mu = opts.init
        for nn in (nc, n):
            ok, st, mu2, nfev, res = _polish(cfg, (chi, q, p), mu, nn, opts)
            total += nfev
            if not ok:
                break
            (chi, q, p), mu = st, mu2
        else:
            return _finish(cfg, (chi, q, p), mu, n, Status.CONVERGED, total, res, gate=opts.gate, opts=opts)

    rs = solve_rs(cfg, RsOptions(n=nc, gate=False))
    total += rs.iterations
    starts = [(1e-1, 1e-1, 5e-2), (1.0, 1.0, 0.5)]
    if rs.converged:
        starts.insert(0, (rs.chi, rs.q, 0.5 * rs.q))

    # scan mu with continuation along the fixed-point curve
    points = []  # (mu, state, phi)
    statuses = []
    prev = None
    bracket = None
    for mu in opts.mu_scan:
        tries = [prev] if prev is not None else starts
        inner = None
        for st0 in tries:
            inner = _fixed_mu(cfg, st0, mu, nc, opts)
            total += inner.iterations
            if inner.status is Status.CONVERGED:
                break
        statuses.append(inner.status)
        if inner.status is not Status.CONVERGED or _degenerate(inner.state, opts):
            if inner.status is Status.CONVERGED:
                points.append((mu, inner.state, None))
            prev = None
            continue
        try:
            phi = mu_residual(cfg, inner.state, mu, nc)
        except (DomainError, InvalidNegativeDiscriminant, NonFiniteError):
            prev = None
            continue
        prev = inner.state
        if points and points[-1][2] is not None and points[-1][2] * phi <= 0:
            bracket = (points[-1], (mu, inner.state, phi))
            points.append((mu, inner.state, phi))
            break
        points.append((mu, inner.state, phi))

    nondeg = [pt for pt in points if pt[2] is not None]
    if bracket is None:
        if rs.converged:
            # p = 0 solves the full system whenever RS does; without a
            # sign change there is no non-degenerate root to prefer
            rs_full = solve_rs(cfg, RsOptions(n=n, init=(rs.chi, rs.q), gate=False))
            total += rs_full.iterations
            if rs_full.converged:
                return _finish(
                    cfg, (rs_full.chi, rs_full.q, 0.0), 1.0, n, Status.CONVERGED, total, rs_full.residual,
                    gate=opts.gate, opts=opts,
                )
        if nondeg:
            mu, st, _ = min(nondeg, key=lambda pt: abs(pt[2]))
            return replace(
                _finish(cfg, st, mu, nc, Status.MU_ROOT_NOT_BRACKETED, total, math.nan), n=nc
            )
        bad = [s for s in statuses if s is not Status.CONVERGED]
        if Status.INVALID_NEGATIVE_DISCRIMINANT in bad:
            return _failed(Status.INVALID_NEGATIVE_DISCRIMINANT, total, n)
        if Status.MAX_ITERS_EXCEEDED in bad:
            return _failed(Status.MAX_ITERS_EXCEEDED, total, n)
        return _failed(Status.NO_SOLUTION, total, n)

    (mu_a, st_a, phi_a), (mu_b, st_b, phi_b) = bracket
    cache = {"state": st_a}

    def phi_of(lmu):
        mu = math.exp(lmu)
        inner = _fixed_mu(cfg, cache["state"], mu, nc, opts)
        if inner.status is not Status.CONVERGED or _degenerate(inner.state, opts):
            raise _ScanBreak(inner.status)
        cache["state"] = inner.state
        cache["iters"] = cache.get("iters", 0) + inner.iterations
        return mu_residual(cfg, inner.state, mu, nc)

    try:
        lmu = optimize.brentq(phi_of, math.log(mu_a), math.log(mu_b), xtol=1e-6)
        mu_c, st_c = math.exp(lmu), cache["state"]
    except (_ScanBreak, DomainError, InvalidNegativeDiscriminant, NonFiniteError):
        # fall back to the bracket end with the smaller residual
        mu_c, st_c = (mu_a, st_a) if abs(phi_a) <= abs(phi_b) else (mu_b, st_b)
    total += cache.get("iters", 0)

    ok, st, mu, nfev, res = _polish(cfg, st_c, mu_c, n, opts)
    total += nfev
    brackets = [(mu_a, mu_b)]
    if not ok:
        return replace(_finish(cfg, st_c, mu_c, nc, Status.MAX_ITERS_EXCEEDED, total, res, brackets), n=nc)
    return _finish(cfg, st, mu, n, Status.CONVERGED, total, res, brackets, gate=opts.gate, opts=opts)


class _ScanBreak(Exception):
    def __init__(self, status):
        super().__init__(status)
        self.status = status
