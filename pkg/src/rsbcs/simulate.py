"""Finite-size Monte Carlo of the sampling system ``y = A x + z``.

Every random draw comes from a Philox counter-based generator keyed by
``(seed, trial, stream)`` with streams 0, 1, 2 for the source, the matrix
and the noise, so runs are reproducible across platforms and two ensembles
simulated with the same seed share their source and noise draws.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.sparse import linalg as sparse_linalg

from .ensemble import EnsembleKind
from .errors import ConfigError, SizeError
from .rs import Distortion, squared_error
from .scalar import PenaltyKind, PenaltySpec, SourcePrior

STREAM_X, STREAM_A, STREAM_Z = 0, 1, 2
L0_MAX_N = 20


@dataclass(frozen=True)
class SimConfig:
    n: int
    rate: float
    ensemble: EnsembleKind
    penalty: PenaltySpec
    prior: SourcePrior
    lam: float
    lam0: float
    trials: int = 1
    seed: int = 0
    distortion: Optional[Distortion] = field(default=None, repr=False)

    def __post_init__(self):
        kind = EnsembleKind(self.ensemble)
        object.__setattr__(self, "ensemble", kind)
        if kind is EnsembleKind.TABULATED:
            raise ConfigError("simulation supports the iid and projector ensembles only")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"rate must be positive, got {self.rate!r}")
        if kind is EnsembleKind.PROJECTOR and self.k > self.n:
            raise ConfigError("projector ensemble needs k <= n")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials must be a positive integer, got {self.trials!r}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if not self.lam > 0 or not self.lam0 >= 0:
            raise ConfigError("lambda must be positive and lambda0 non-negative")
        if self.penalty.kind is PenaltyKind.CUSTOM:
            raise ConfigError("simulation supports the built-in penalties only")
        if self.penalty.kind is PenaltyKind.L0 and self.n > L0_MAX_N:
            raise SizeError(f"exhaustive zero-norm reconstruction needs n <= {L0_MAX_N}, got n={self.n}")

    @property
    def k(self) -> int:
        return max(1, int(round(self.n / self.rate)))


@dataclass(frozen=True)
class SimReport:
    mean: float
    stderr: float
    distortions: tuple[float, ...]
    iterations: tuple[int, ...]
    seed: int
    n: int
    k: int

    @property
    def trials(self) -> int:
        return len(self.distortions)

    def summary(self) -> dict:
        it = np.asarray(self.iterations, dtype=float)
        return {
            "mean": self.mean,
            "stderr": None if math.isnan(self.stderr) else self.stderr,
            "trials": self.trials,
            "seed": self.seed,
            "n": self.n,
            "k": self.k,
            "iterations": {"mean": float(it.mean()), "max": int(it.max()), "min": int(it.min())},
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["trial", "distortion"])
            for i, d in enumerate(self.distortions):
                w.writerow([i, repr(float(d))])

    def write_json(self, path, extra: Optional[dict] = None) -> None:
        data = self.summary()
        if extra:
            data.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def stream_rng(seed: int, trial: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial), int(stream)])))


def sample_system(cfg: SimConfig, trial_index: int):
    """Draw ``(A, x, y)`` for one trial."""
    n, k = cfg.n, cfg.k
    x = cfg.prior.sample(stream_rng(cfg.seed, trial_index, STREAM_X), n)
    rng_a = stream_rng(cfg.seed, trial_index, STREAM_A)
    if cfg.ensemble is EnsembleKind.IID:
        A = rng_a.standard_normal((k, n)) / math.sqrt(k)
    else:
        G = rng_a.standard_normal((n, n))
        Q, R = np.linalg.qr(G)
        # sign fix makes Q Haar distributed
        Q = Q * np.where(np.diag(R) < 0, -1.0, 1.0)
        A = math.sqrt(cfg.rate) * Q[:k]
    z = math.sqrt(cfg.lam0) * stream_rng(cfg.seed, trial_index, STREAM_Z).standard_normal(k)
    return A, x, A @ x + z


def _ridge(A, y, lam):
    k, n = A.shape
    if k < n:
        # push-through identity: smaller k x k system
        c = linalg.cho_factor(A @ A.T + lam * np.eye(k))
        return A.T @ linalg.cho_solve(c, y)
    c = linalg.cho_factor(A.T @ A + lam * np.eye(n))
    return linalg.cho_solve(c, A.T @ y)


def _lasso_objective(A, y, v, lam):
    r = y - A @ v
    return r @ r / (2.0 * lam) + np.abs(v).sum()


def _lasso_polish(A, y, v, lam):
    """Exact solution on the support and signs of ``v``, if it satisfies the optimality conditions."""
    S = np.flatnonzero(v)
    if S.size == 0 or S.size > A.shape[0]:
        return None
    sg = np.sign(v[S])
    As = A[:, S]
    try:
        c = linalg.cho_factor(As.T @ As)
    except linalg.LinAlgError:
        return None
    vs = linalg.cho_solve(c, As.T @ y - lam * sg)
    if np.any(np.sign(vs) != sg):
        return None
    out = np.zeros_like(v)
    out[S] = vs
    grad = A.T @ (A @ out - y) / lam
    off = np.ones(v.size, dtype=bool)
    off[S] = False
    if off.any() and np.max(np.abs(grad[off])) > 1.0 + 1e-9:
        return None
    return out


def _spectral_norm_sq(A) -> float:
    """Upper estimate of ``||A||_2^2`` by Lanczos on the smaller Gram operator."""
    k, n = A.shape
    m = min(k, n)
    if m <= 64:
        return float(np.linalg.norm(A, 2) ** 2)
    if k <= n:
        op = sparse_linalg.LinearOperator((k, k), matvec=lambda v: A @ (A.T @ v), dtype=float)
    else:
        op = sparse_linalg.LinearOperator((n, n), matvec=lambda v: A.T @ (A @ v), dtype=float)
    v0 = np.ones(m) / math.sqrt(m)
    top = sparse_linalg.eigsh(op, k=1, which="LA", tol=1e-8, v0=v0, return_eigenvectors=False)[0]
    # small safety margin keeps the step below 1 / L
    return float(top) * (1.0 + 1e-6)


# stable-support iteration counts at which the exact active-set solve is tried
_POLISH_AT = frozenset(5 * 2**i for i in range(12))


def _lasso(A, y, lam, rtol=1e-10, max_iters=100_000):
    """Accelerated proximal gradient with adaptive restart for ``(1/2 lam)||y - Av||^2 + ||v||_1``.

    Stops when the relative objective change falls below ``rtol``.  While the
    iterate's support is stable, and at the stop, it is also tried as an exact
    active set; a candidate that passes the optimality conditions is returned.
    """
    n = A.shape[1]
    step = lam / _spectral_norm_sq(A)
    v = np.zeros(n)
    Av = np.zeros(A.shape[0])
    u, Au = v, Av
    t = 1.0
    F = y @ y / (2.0 * lam)
    support = None
    stable = 0
    for it in range(1, max_iters + 1):
        w = u - step * (A.T @ (Au - y)) / lam
        v_new = np.sign(w) * np.maximum(np.abs(w) - step, 0.0)
        Av_new = A @ v_new
        r = y - Av_new
        F_new = r @ r / (2.0 * lam) + np.abs(v_new).sum()
        # gradient restart
        if (u - v_new) @ (v_new - v) > 0:
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        u = v_new + beta * (v_new - v)
        Au = Av_new + beta * (Av_new - Av)
        t = t_new
        done = abs(F - F_new) <= rtol * max(abs(F_new), 1e-300)
        v, Av, F = v_new, Av_new, F_new
        supp = v != 0
        if support is not None and np.array_equal(supp, support):
            stable += 1
        else:
            stable = 0
        support = supp
        if done or stable in _POLISH_AT:
            exact = _lasso_polish(A, y, v, lam)
            if exact is not None and _lasso_objective(A, y, exact, lam) <= F + 1e-12 * abs(F):
                return exact, it
        if done:
            return v, it
    return v, max_iters


def _l0_exhaustive(A, y, lam, chunk=20_000):
    k, n = A.shape
    if n > L0_MAX_N:
        raise SizeError(f"exhaustive zero-norm reconstruction needs n <= {L0_MAX_N}, got n={n}")
    G = A.T @ A
    b = A.T @ y
    yy = float(y @ y)
    best_obj = yy / (2.0 * lam)
    best_S: tuple = ()
    best_v = np.zeros(0)
    count = 1
    for size in range(1, min(k, n) + 1):
        combos = itertools.combinations(range(n), size)
        while True:
            idx = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
            if idx.size == 0:
                break
            count += len(idx)
            Gs = G[idx[:, :, None], idx[:, None, :]]
            bs = b[idx]
            try:
                vs = np.linalg.solve(Gs, bs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                vs = np.stack([np.linalg.lstsq(g, c, rcond=None)[0] for g, c in zip(Gs, bs)])
            rss = yy - np.einsum("ij,ij->i", bs, vs)
            obj = np.maximum(rss, 0.0) / (2.0 * lam) + size
            j = int(np.argmin(obj))
            # strict improvement only: ties go to the smaller support
            if obj[j] < best_obj - 1e-12 * max(1.0, abs(best_obj)):
                best_obj, best_S, best_v = float(obj[j]), tuple(idx[j]), vs[j]
    v = np.zeros(n)
    if best_S:
        v[list(best_S)] = best_v
    return v, count


def reconstruct(A, y, penalty: PenaltySpec, lam: float, return_info: bool = False):
    """Minimize ``(1/2 lam)||y - A v||^2 + sum u(v_j)``."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or y.shape != (A.shape[0],):
        raise ValueError(f"inconsistent shapes A{A.shape}, y{y.shape}")
    kind = penalty.kind
    if kind is PenaltyKind.L2:
        v, it = _ridge(A, y, lam), 1
    elif kind is PenaltyKind.L1:
        v, it = _lasso(A, y, lam)
    elif kind is PenaltyKind.L0:
        v, it = _l0_exhaustive(A, y, lam)
    else:
        raise ConfigError("reconstruction supports the built-in penalties only")
    return (v, it) if return_info else v


def _trial(args):
    cfg, i = args
    A, x, y = sample_system(cfg, i)
    xhat, it = reconstruct(A, y, cfg.penalty, cfg.lam, return_info=True)
    dist = cfg.distortion or squared_error
    return float(np.mean(dist(xhat, x))), int(it)


def run_sim(cfg: SimConfig, jobs: int = 1) -> SimReport:
    """Run ``cfg.trials`` independent trials and aggregate them in trial order."""
    tasks = [(cfg, i) for i in range(cfg.trials)]
    if jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial, tasks))
    else:
        results = [_trial(t) for t in tasks]
    d = np.array([r[0] for r in results])
    mean = float(math.fsum(d) / d.size)
    stderr = float(np.std(d, ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.nan
    return SimReport(mean, stderr, tuple(float(v) for v in d), tuple(r[1] for r in results), cfg.seed, cfg.n, cfg.k)
