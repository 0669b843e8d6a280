"""Gaussian averages ``int h(z) Dz`` for piecewise-smooth integrands.

Smooth integrands use Gauss-Hermite nodes for the standard normal weight.
When breakpoints are given the line is cut at them and every piece is
integrated with Gauss-Legendre against the normal density.  The two outer
pieces are truncated at ``TAIL`` standard deviations, where the remaining
normal mass (< 1e-32) is below double precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .errors import NonFiniteError

DEFAULT_NODES = 96
TAIL = 12.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@lru_cache(maxsize=None)
def hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point rule for the standard normal measure."""
    z, w = hermegauss(n)
    w = w / w.sum()
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@lru_cache(maxsize=None)
def legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = leggauss(n)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def split_nodes(breaks, n: int, center=0.0, scale=1.0, tail: float = TAIL):
    """Nodes and log-weights of a piecewise Gauss-Legendre rule for N(center, scale^2).

    ``breaks`` has shape ``(..., K)``; ``center`` and ``scale`` broadcast
    against its leading dimensions.  Breakpoints outside the truncation window
    are clipped to it, which yields zero-width pieces with ``-inf`` log-weight.
    Returns ``(nodes, logw)`` with shape ``(..., (K + 1) * n)``.
    """
    breaks = np.asarray(breaks, dtype=float)
    center = np.asarray(center, dtype=float)[..., None]
    scale = np.asarray(scale, dtype=float)[..., None]
    lo = center - tail * scale
    hi = center + tail * scale
    b = np.sort(np.clip(breaks, lo, hi), axis=-1)
    shape = np.broadcast_shapes(b.shape[:-1], lo.shape[:-1])
    b = np.broadcast_to(b, shape + b.shape[-1:])
    edges = np.concatenate(
        [np.broadcast_to(lo, shape + (1,)), b, np.broadcast_to(hi, shape + (1,))], axis=-1
    )
    t, wl = legendre_rule(n)
    a = edges[..., :-1, None]
    c = edges[..., 1:, None]
    half = 0.5 * (c - a)
    nodes = half * t + 0.5 * (c + a)
    u = (nodes - center[..., None]) / scale[..., None]
    with np.errstate(divide="ignore"):
        logw = np.log(half * wl) - 0.5 * u * u - _LOG_SQRT_2PI - np.log(scale[..., None])
    new_shape = shape + (-1,)
    return nodes.reshape(new_shape), logw.reshape(new_shape)


def split_rule(breaks, n: int, center=0.0, scale=1.0, tail: float = TAIL):
    """Like :func:`split_nodes` but returns plain weights."""
    nodes, logw = split_nodes(breaks, n, center, scale, tail)
    return nodes, np.exp(logw)


@dataclass(frozen=True)
class QuadratureRule:
    """A rule for the standard normal measure, optionally cut at breakpoints."""

    n: int = DEFAULT_NODES
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"node count must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "breakpoints", tuple(sorted(float(b) for b in self.breakpoints)))

    def with_breakpoints(self, breakpoints) -> "QuadratureRule":
        return QuadratureRule(self.n, tuple(breakpoints))

    def refined(self, factor: int = 2) -> "QuadratureRule":
        return QuadratureRule(self.n * factor, self.breakpoints)

    def nodes_weights(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.breakpoints:
            return hermite_rule(self.n)
        return split_rule(np.array(self.breakpoints), self.n)


def _checked(values, nodes):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = np.asarray(nodes)[~np.isfinite(np.broadcast_to(values, np.shape(nodes)))]
        raise NonFiniteError(f"integrand is non-finite at node(s) {bad[:5]}")
    return values


def gauss_expect(rule: QuadratureRule, h) -> float:
    """``int h(z) Dz`` with ``h`` evaluated on an array of nodes."""
    z, w = rule.nodes_weights()
    vals = _checked(h(z), z)
    return float(np.dot(w, np.broadcast_to(vals, z.shape)))


def gauss_expect_2d(rule_z: QuadratureRule, rule_y: QuadratureRule, h, y_breakpoints=None) -> float:
    """``int int h(z, y) Dy Dz`` as a tensor product.

    ``y_breakpoints``, if given, maps the array of outer nodes ``z`` to an
    array of shape ``(len(z), K)`` of inner breakpoints; they are merged with
    the fixed breakpoints of ``rule_y``.
    """
    z, wz = rule_z.nodes_weights()
    if y_breakpoints is None and not rule_y.breakpoints:
        y, wy = hermite_rule(rule_y.n)
        Z, Y = z[:, None], y[None, :]
        W = wz[:, None] * wy[None, :]
    else:
        cols = [np.broadcast_to(np.array(rule_y.breakpoints), (z.size, len(rule_y.breakpoints)))]
        if y_breakpoints is not None:
            cols.append(np.atleast_2d(np.asarray(y_breakpoints(z), dtype=float)).reshape(z.size, -1))
        Y, wy = split_rule(np.concatenate(cols, axis=1), rule_y.n)
        Z = z[:, None]
        W = wz[:, None] * wy
    vals = _checked(np.broadcast_to(h(Z, Y), W.shape), np.broadcast_to(Z, W.shape))
    return float(np.sum(W * vals))
