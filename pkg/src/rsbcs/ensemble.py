"""R-transforms of the Gramian spectrum of the sampling matrix.

Convention: with ``G(s) = E[1/(t - s)]`` the R-transform is
``R(w) = G^{-1}(-w) - 1/w``, so that ``R(0) = E[t]`` and a point mass at
``c`` has ``R = c``.  Three ensembles are supported:

* ``IID``: entries of ``A`` i.i.d. with variance ``1/k``.  The spectrum of
  ``A^T A`` is Marchenko-Pastur and ``R(w) = 1 / (1 - r w)``.
* ``PROJECTOR``: rows of ``A`` orthogonal with squared norm ``r``, i.e.
  ``A A^T = r I_k``.  The spectrum is ``(1/r) delta_r + (1 - 1/r) delta_0``.
* ``TABULATED``: a finite atomic spectrum given as (eigenvalue, mass) pairs.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigError, ConvergenceError, DomainError


class EnsembleKind(str, enum.Enum):
    IID = "iid"
    PROJECTOR = "projector"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class EnsembleSpec:
    """Random-matrix ensemble of the sampling matrix.

    ``rate`` is the compression rate ``r = n / k``.  For tabulated spectra
    the rate is carried along for bookkeeping (simulation sizes, reports) but
    the R-transform only depends on the atoms.
    """

    kind: EnsembleKind
    rate: float
    eigenvalues: tuple[float, ...] = field(default=(), repr=False)
    masses: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        kind = EnsembleKind(self.kind)
        object.__setattr__(self, "kind", kind)
        r = float(self.rate)
        if not (math.isfinite(r) and r > 0):
            raise ConfigError(f"rate must be positive and finite, got {self.rate!r}")
        object.__setattr__(self, "rate", r)
        if kind is EnsembleKind.PROJECTOR and r < 1:
            # k > n rows cannot be mutually orthogonal in R^n
            raise ConfigError(f"projector ensemble needs rate >= 1, got {r}")
        if kind is EnsembleKind.TABULATED:
            eig = tuple(float(t) for t in self.eigenvalues)
            mass = tuple(float(m) for m in self.masses)
            if not eig or len(eig) != len(mass):
                raise ConfigError("tabulated spectrum needs equal-length, non-empty eigenvalue and mass lists")
            if any(m < 0 for m in mass):
                raise ConfigError("tabulated masses must be non-negative")
            if abs(math.fsum(mass) - 1.0) > 1e-12:
                raise ConfigError(f"tabulated masses must sum to 1, got {math.fsum(mass)!r}")
            if any(t < 0 for t in eig):
                raise ConfigError("Gramian eigenvalues must be non-negative")
            # zero-mass atoms do not affect the transform but would break the
            # Stieltjes inversion bracket
            kept = [(t, m) for t, m in zip(eig, mass) if m > 0]
            object.__setattr__(self, "eigenvalues", tuple(t for t, _ in kept))
            object.__setattr__(self, "masses", tuple(m for _, m in kept))

    @classmethod
    def iid(cls, rate: float) -> "EnsembleSpec":
        return cls(EnsembleKind.IID, rate)

    @classmethod
    def projector(cls, rate: float) -> "EnsembleSpec":
        return cls(EnsembleKind.PROJECTOR, rate)

    @classmethod
    def tabulated(cls, eigenvalues, masses, rate: float = 1.0) -> "EnsembleSpec":
        return cls(EnsembleKind.TABULATED, rate, tuple(eigenvalues), tuple(masses))

    @classmethod
    def from_csv(cls, path, rate: float = 1.0) -> "EnsembleSpec":
        """Load a tabulated spectrum from a two-column CSV with a header row."""
        eig, mass = [], []
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 2:
                raise ConfigError(f"{path}: expected a header row with two columns")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise ConfigError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
                try:
                    eig.append(float(row[0]))
                    mass.append(float(row[1]))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from None
        return cls.tabulated(eig, mass, rate=rate)

    @property
    def mean(self) -> float:
        """Spectral mean ``E[t]``; equals ``R(0)``."""
        if self.kind is EnsembleKind.TABULATED:
            return math.fsum(t * m for t, m in zip(self.eigenvalues, self.masses))
        return 1.0


def _atomic_r_transform(eig: np.ndarray, mass: np.ndarray, omega: float) -> float:
    """R-transform of an atomic spectrum at ``omega < 0``.

    Writing ``u = -1/omega`` the defining equation ``G(R + 1/omega) = -omega``
    becomes ``sum_i m_i (t_i - R) / (t_i - R + u) = 0``, whose left side
    decreases from 1 to -inf on ``R in (-inf, t_min + u)``.  The root lies in
    ``[t_min, t_min + u)``.  Solving for R directly avoids cancelling the
    ``1/omega`` term.
    """
    u = -1.0 / omega
    tmin = float(eig.min())

    def h(r):
        d = eig - r
        return float(np.dot(mass, d / (d + u)))

    lo = tmin
    if h(lo) <= 0.0:
        # all mass sits at t_min
        return lo
    # h -> -inf only at the pole; step toward it geometrically
    gap = u
    for _ in range(200):
        gap *= 0.5
        hi = tmin + u - gap
        if h(hi) < 0.0:
            break
    else:
        raise ConvergenceError(f"could not bracket the Stieltjes inverse at omega={omega!r}")
    try:
        return optimize.brentq(h, lo, hi, xtol=1e-15 * max(1.0, abs(hi)), rtol=1e-15, maxiter=500)
    except (RuntimeError, ValueError) as exc:
        raise ConvergenceError(f"Stieltjes inversion failed at omega={omega!r}: {exc}") from None


def r_transform(spec: EnsembleSpec, omega: float) -> float:
    """Evaluate ``R_J(omega)`` for the ensemble."""
    omega = float(omega)
    r = spec.rate
    if spec.kind is EnsembleKind.IID:
        denom = 1.0 - r * omega
        if denom <= 0.0:
            raise DomainError(f"Marchenko-Pastur R-transform has a pole at omega={1 / r!r}; got {omega!r}")
        return 1.0 / denom
    if spec.kind is EnsembleKind.PROJECTOR:
        if r == 1.0:
            # identity Gramian; the unrationalized square root switches branch at -1
            return 1.0
        disc = (r * omega - 1.0) ** 2 + 4.0 * omega
        if disc < 0.0:
            raise DomainError(f"projector R-transform discriminant negative at omega={omega!r}")
        # rationalized form of (r w - 1 + sqrt(disc)) / (2 w); finite at w = 0
        return 2.0 / (1.0 - r * omega + math.sqrt(disc))
    if omega == 0.0:
        return spec.mean
    if omega > 0.0:
        raise DomainError(f"tabulated R-transform is only evaluated for omega <= 0, got {omega!r}")
    return _atomic_r_transform(np.asarray(spec.eigenvalues), np.asarray(spec.masses), omega)


def r_integral(spec: EnsembleSpec, lam: float, a: float, b: float) -> float:
    """Return ``int_a^b R_J(-w / lam) dw``."""
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam!r}")
    if a < 0 or b < 0:
        raise DomainError(f"integration limits must be non-negative, got [{a!r}, {b!r}]")
    if a == b:
        return 0.0
    if spec.kind is EnsembleKind.IID:
        r = spec.rate
        return (lam / r) * (math.log1p(r * b / lam) - math.log1p(r * a / lam))
    val, _ = integrate.quad(lambda w: r_transform(spec, -w / lam), a, b, epsabs=0.0, epsrel=1e-10, limit=200)
    return val


def empirical_r_transform(eigenvalues, omega: float) -> float:
    """R-transform of the empirical spectral measure of ``eigenvalues``."""
    eig = np.asarray(eigenvalues, dtype=float).ravel()
    if eig.size == 0:
        raise ValueError("need at least one eigenvalue")
    if not omega < 0:
        raise DomainError(f"empirical R-transform requires omega < 0, got {omega!r}")
    mass = np.full(eig.size, 1.0 / eig.size)
    return _atomic_r_transform(eig, mass, float(omega))
