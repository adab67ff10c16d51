"""Deterministic expectations of tanh-weighted Gaussian products.

Every expectation used by the population maps has the form

    E[ tanh(A * Q(a, b) + c) * P(a, b) ]

with (a, b) independent standard normals, Q = a * (s a + k b) for an
angle with sine s and cosine k, and P either 1, Q itself or a * (k a - s b).
Q and P are homogeneous quadratics, so in polar coordinates a = r cos t,
b = r sin t the radial part r^2 / 2 ~ Exp(1) factors out:

    E[tanh(A Q + c)]     = (1/pi) int_0^pi  R0(2 A q(t), c) dt
    E[tanh(A Q + c) P]   = (1/pi) int_0^pi  p(t) R2(2 A q(t), c) dt

with R0(l, c) = E tanh(l s + c) and R2(l, c) = E 2 s tanh(l s + c) over
s ~ Exp(1).  Integrating by parts turns the radial integrands into
sech^2 bumps, which Gauss-Legendre handles at any l; the angular integral
is split at the zeros of q and done by tanh-sinh, which resolves the 1/A
boundary layers that make tensor Gauss-Hermite inaccurate at high SNR.

A tensor Gauss-Hermite rule and a Monte Carlo estimator of the same
quantities are kept as independent cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import roots_legendre

from mlr_em.errors import ValidationError

METHODS = ("polar", "hermite", "monte_carlo")

_GL_X, _GL_W = roots_legendre(16)
_U_CUT = 20.0  # sech^2(20) < 2e-17
_S_CUT = 45.0  # 45 e^-45 < 2e-18
_PANELS = 40
_TS_SPAN = 4.0


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretization settings.

    ``nodes_per_axis`` is the tensor Gauss-Hermite order for the cross-check
    rule and the per-side node count of the angular tanh-sinh rule.
    """

    nodes_per_axis: int = 128
    mc_samples: int = 100_000
    mc_seed: int = 0
    method: str = "polar"

    def __post_init__(self) -> None:
        if self.nodes_per_axis < 16:
            raise ValidationError(f"nodes_per_axis must be >= 16, got {self.nodes_per_axis}")
        if self.mc_samples < 10_000:
            raise ValidationError(f"mc_samples must be >= 1e4, got {self.mc_samples}")
        if self.method not in METHODS:
            raise ValidationError(f"unknown quadrature method {self.method!r}")


class TanhMoments(NamedTuple):
    """E[tanh(A Q + c)], E[tanh(A Q + c) Q], E[tanh(A Q + c) a (k a - s b)]."""

    mean: float
    with_q: float
    with_p: float


def radial_moments(lam: np.ndarray, c: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
    """R0 = E tanh(lam s + c) and R2 = E 2 s tanh(lam s + c) for s ~ Exp(1)."""
    lam = np.asarray(lam, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), lam.shape)
    flip = lam < 0
    lp = np.abs(lam)
    cp = np.where(flip, -c, c)
    r0 = np.tanh(cp)
    r2 = 2.0 * r0
    with np.errstate(invalid="ignore"):
        lo = np.maximum(cp, -_U_CUT)
        hi = np.minimum(_U_CUT, cp + _S_CUT * lp)
    live = (lp > 0) & (hi > lo)
    if np.any(live):
        L, C, a, b = lp[live], cp[live], lo[live], hi[live]
        edges = np.linspace(0.0, 1.0, _PANELS + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        frac = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
        wts = (half[:, None] * _GL_W[None, :]).ravel()
        width = b - a
        u = a[:, None] + width[:, None] * frac[None, :]
        s = (u - C[:, None]) / L[:, None]
        kern = np.exp(-s) / np.cosh(u) ** 2 * (width[:, None] * wts[None, :])
        j0 = kern.sum(axis=1)
        j1 = (kern * s).sum(axis=1)
        r0 = r0.copy()
        r2 = r2.copy()
        r0[live] += j0
        r2[live] += 2.0 * (j0 + j1)
    return np.where(flip, -r0, r0), np.where(flip, -r2, r2)


def tanh_sinh_rule(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Double-exponential nodes and weights on [a, b], 2n+1 points."""
    h = _TS_SPAN / n
    k = np.arange(-n, n + 1) * h
    u = 0.5 * math.pi * np.sinh(k)
    w = 0.5 * math.pi * np.cosh(k) / np.cosh(u) ** 2 * h * 0.5 * (b - a)
    # distance to the nearer endpoint, computed without cancellation
    gap = 0.5 * (b - a) / (np.exp(np.abs(u)) * np.cosh(u))
    t = np.where(u > 0, b - gap, a + gap)
    return t, w


def _angular_breaks(varphi: float) -> list[float]:
    pts = sorted({0.0, 0.5 * math.pi, math.pi - varphi, math.pi})
    return [p for p in pts if 0.0 <= p <= math.pi]


def polar_tanh_moments(A: float, varphi: float, c: float, nodes: int = 128) -> TanhMoments:
    """All three tanh moments by the polar decomposition (see module docstring)."""
    s, k = math.sin(varphi), math.cos(varphi)
    tot = np.zeros(3)
    brk = _angular_breaks(varphi)
    for a, b in zip(brk[:-1], brk[1:]):
        if b <= a:
            continue
        t, w = tanh_sinh_rule(a, b, nodes)
        ct = np.cos(t)
        q = ct * (s * ct + k * np.sin(t))
        p = ct * (k * ct - s * np.sin(t))
        r0, r2 = radial_moments(2.0 * A * q, c)
        tot += [w @ r0, w @ (q * r2), w @ (p * r2)]
    tot /= math.pi
    return TanhMoments(*map(float, tot))


def _hermite(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = hermegauss(nodes)
    return x, w / math.sqrt(2.0 * math.pi)


def gauss_hermite_expectation(f: Callable[[np.ndarray, np.ndarray], np.ndarray], nodes: int = 128) -> float:
    """E f(a, b) for independent standard normals by a tensor Gauss-Hermite rule."""
    x, w = _hermite(nodes)
    a, b = np.meshgrid(x, x, indexing="ij")
    return float(np.sum(np.outer(w, w) * f(a, b)))


def hermite_tanh_moments(A: float, varphi: float, c: float, nodes: int = 128) -> TanhMoments:
    s, k = math.sin(varphi), math.cos(varphi)
    x, w = _hermite(nodes)
    a, b = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    q = a * (s * a + k * b)
    th = np.tanh(A * q + c)
    return TanhMoments(
        float(np.sum(W * th)),
        float(np.sum(W * th * q)),
        float(np.sum(W * th * a * (k * a - s * b))),
    )


def monte_carlo_tanh_moments(A: float, varphi: float, c: float, samples: int, seed: int) -> TanhMoments:
    s, k = math.sin(varphi), math.cos(varphi)
    rng = np.random.Generator(np.random.Philox(seed))
    a = rng.standard_normal(samples)
    b = rng.standard_normal(samples)
    q = a * (s * a + k * b)
    th = np.tanh(A * q + c)
    return TanhMoments(float(th.mean()), float((th * q).mean()), float((th * a * (k * a - s * b)).mean()))


def tanh_moments(A: float, varphi: float, c: float, quad: QuadratureSpec) -> TanhMoments:
    """Dispatch on ``quad.method``; c may be +-inf (then tanh is a constant sign)."""
    if math.isinf(c):
        sgn = math.copysign(1.0, c)
        # E[Q] = s and E[a (k a - s b)] = k
        return TanhMoments(sgn, sgn * math.sin(varphi), sgn * math.cos(varphi))
    if quad.method == "polar":
        return polar_tanh_moments(A, varphi, c, quad.nodes_per_axis)
    if quad.method == "hermite":
        return hermite_tanh_moments(A, varphi, c, quad.nodes_per_axis)
    return monte_carlo_tanh_moments(A, varphi, c, quad.mc_samples, quad.mc_seed)


def homogeneous_expectation(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    degree: int,
    breaks: list[float] | None = None,
    nodes: int = 64,
) -> float:
    """E f(a, b) for f positively homogeneous of the given degree.

    E f = E[r^degree] * (1 / 2pi) int_0^{2pi} f(cos t, sin t) dt, with the
    angular integral done piecewise by Gauss-Legendre between ``breaks``
    (where f may be discontinuous or kinked).
    """
    pts = sorted({0.0, 2.0 * math.pi, *[(p % (2.0 * math.pi)) for p in (breaks or [])]})
    gx, gw = roots_legendre(nodes)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        t = 0.5 * (a + b) + 0.5 * (b - a) * gx
        total += 0.5 * (b - a) * float(gw @ f(np.cos(t), np.sin(t)))
    radial = 2.0 ** (degree / 2.0) * math.gamma(1.0 + degree / 2.0)
    return radial * total / (2.0 * math.pi)
