"""Population-level EM maps.

Noiseless closed forms, the general-SNR map evaluated by deterministic
quadrature, the contraction constant k*(eta), the deviation of the
high-SNR map from its noiseless limit, and the sign-product identities
for correlated Gaussians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mlr_em.errors import NumericalError, ValidationError
from mlr_em.geometry import angle_diagnostics, plane_frame
from mlr_em.model import GroundTruth, MixingImbalance, make_ground_truth
from mlr_em.quadrature import (
    QuadratureSpec,
    gauss_hermite_expectation,
    homogeneous_expectation,
    tanh_moments,
)
from mlr_em.trajectory import Trajectory, make_record

TWO_OVER_PI = 2.0 / math.pi
DEFAULT_QUAD = QuadratureSpec()


# --------------------------------------------------------------------------
# noiseless closed forms


def m_noiseless(theta: np.ndarray, gt: GroundTruth) -> np.ndarray:
    """M/||theta*|| = (2/pi) [sgn(rho) varphi theta*/||theta*|| + cos(varphi) theta/||theta||]."""
    theta = np.asarray(theta, dtype=float)
    diag = angle_diagnostics(theta, gt)
    if diag.degenerate:
        return np.zeros_like(theta)
    e1 = theta / np.linalg.norm(theta)
    return gt.norm * TWO_OVER_PI * (diag.sgn_rho * diag.varphi * gt.direction + diag.cos_varphi * e1)


def n_noiseless(theta: np.ndarray, gt: GroundTruth) -> float:
    """sgn(rho) (2/pi) varphi tanh(nu*); the current nu plays no role."""
    diag = angle_diagnostics(np.asarray(theta, dtype=float), gt)
    return diag.sgn_rho * TWO_OVER_PI * diag.varphi * gt.tanh_nu_star


def recurrence_step(varphi: float) -> float:
    """Next angle from tan v' = tan v + v (tan^2 v + 1)."""
    if not 0.0 <= varphi <= 0.5 * math.pi:
        raise ValidationError(f"varphi must lie in [0, pi/2], got {varphi}")
    if varphi >= 0.5 * math.pi:
        return 0.5 * math.pi
    t = math.tan(varphi)
    return math.atan(t + varphi * (t * t + 1.0))


def run_population_noiseless(
    theta0: np.ndarray,
    gt: GroundTruth,
    max_iters: int = 50,
    eps_phi: float = 1e-12,
    nu0: float = 0.0,
) -> Trajectory:
    """Iterate the noiseless population map until phi <= eps_phi or max_iters.

    Record t carries the iterate theta^t, its angles, and errors against
    sgn(rho^t) theta* and the sign-aligned weights.  Plane coordinates are
    in the frame of (theta*, theta^0).
    """
    theta = np.array(theta0, dtype=float)
    tanh_nu = MixingImbalance.from_nu(nu0).tanh_nu
    flags: set[str] = set()
    diag0 = angle_diagnostics(theta, gt)
    if diag0.degenerate:
        flags.add("zero_start")
        frame0 = None
    else:
        frame0 = plane_frame(theta, gt)
        if diag0.rho == 0.0:
            flags.add("orthogonal_start")
    recs = Trajectory([make_record(0, theta, tanh_nu, gt, frame0, phase="population")], flags)
    for t in range(1, max_iters + 1):
        if recs[-1].phi <= eps_phi:
            break
        theta, tanh_nu = m_noiseless(theta, gt), n_noiseless(theta, gt)
        recs.append(make_record(t, theta, tanh_nu, gt, frame0, phase="population"))
    if recs[-1].phi > eps_phi:
        recs.flags.add("not_converged")
    return recs


# --------------------------------------------------------------------------
# general SNR


@dataclass(frozen=True)
class GeneralSnrContext:
    eta: float
    k: float
    varphi: float
    sgn_rho: float
    A_eta: float
    varphi_eta: float
    snr_factor: float  # sqrt(1 + eta^-2)
    cos_varphi: float
    cos_varphi_eta: float

    @classmethod
    def build(cls, k: float, varphi: float, sgn_rho: float, eta: float, cos_varphi: float | None = None) -> GeneralSnrContext:
        if not (eta > 0 and math.isfinite(eta)):
            raise ValidationError(f"eta must be finite and positive, got {eta}")
        cphi = math.cos(varphi) if cos_varphi is None else cos_varphi
        sphi = math.sin(varphi)
        inv = 1.0 / eta
        r = math.hypot(1.0, inv)
        # cos^2 varphi_eta = (cos^2 varphi + eta^-2) / (1 + eta^-2), no cancellation
        c_eta = math.hypot(cphi, inv)
        return cls(
            eta=eta,
            k=k,
            varphi=varphi,
            sgn_rho=1.0 if sgn_rho >= 0 else -1.0,
            A_eta=k * eta * eta * r,
            varphi_eta=math.atan2(sphi, c_eta),
            snr_factor=r,
            cos_varphi=cphi,
            cos_varphi_eta=c_eta / r,
        )

    @classmethod
    def of(cls, theta: np.ndarray, gt: GroundTruth) -> GeneralSnrContext:
        diag = angle_diagnostics(theta, gt)
        return cls.build(diag.k, diag.varphi, diag.sgn_rho, gt.eta, diag.cos_varphi)


def general_update(
    theta: np.ndarray, nu: float, gt: GroundTruth, quad: QuadratureSpec = DEFAULT_QUAD
) -> tuple[np.ndarray, float]:
    """Population (M, N) at any SNR.

    In the frame e1 = theta/||theta||, e2 = unit part of theta* orthogonal
    to e1, with g_eta, g' unit Gaussians of correlation sin(varphi_eta) and
    w = +-1 the component sign:

        M/||theta*|| = r E[t g_eta g'] e1
                       + s (cos varphi / cos^2 varphi_eta) E[t g_eta (g_eta - sin varphi_eta g')] e2
        N = s E[w t],   t = tanh(A g_eta g' + s w nu)

    where r = sqrt(1 + eta^-2) and s = sgn(rho).  Writing
    g_eta = a, g' = sin(varphi_eta) a + cos(varphi_eta) b
    with a, b independent turns the second expectation into
    cos(varphi_eta) E[t a (cos(varphi_eta) a - sin(varphi_eta) b)].
    """
    theta = np.asarray(theta, dtype=float)
    if gt.sigma == 0.0:
        return m_noiseless(theta, gt), n_noiseless(theta, gt)
    diag = angle_diagnostics(theta, gt)
    if diag.degenerate:
        # A = 0: every weight is tanh(nu), so M = 0 and N = tanh(nu)
        return np.zeros_like(theta), MixingImbalance.from_nu(nu).tanh_nu
    ctx = GeneralSnrContext.build(diag.k, diag.varphi, diag.sgn_rho, gt.eta, diag.cos_varphi)
    frame = plane_frame(theta, gt)
    s = ctx.sgn_rho
    c1 = c2 = n_val = 0.0
    for w, pw in ((1.0, gt.pi_star[0]), (-1.0, gt.pi_star[1])):
        if pw == 0.0:
            continue
        offset = s * w * nu if math.isfinite(nu) else (math.inf if s * w * nu > 0 else -math.inf)
        mom = tanh_moments(ctx.A_eta, ctx.varphi_eta, offset, quad)
        c1 += pw * mom.with_q
        c2 += pw * mom.with_p
        n_val += pw * w * mom.mean
    c1 *= ctx.snr_factor
    c2 *= s * (ctx.cos_varphi / ctx.cos_varphi_eta) if ctx.cos_varphi > 0 else 0.0
    m = gt.norm * (c1 * frame.e_1 + c2 * frame.e_2)
    return m, s * n_val


def m_general(theta: np.ndarray, nu: float, gt: GroundTruth, quad: QuadratureSpec = DEFAULT_QUAD) -> np.ndarray:
    return general_update(theta, nu, gt, quad)[0]


def n_general(theta: np.ndarray, nu: float, gt: GroundTruth, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    return general_update(theta, nu, gt, quad)[1]


def m_norm_bound(gt: GroundTruth) -> float:
    """(arctan(eta) / (pi/2)) ||theta*|| + (2/pi) sigma."""
    if gt.sigma == 0.0:
        return gt.norm
    return math.atan(gt.eta) / (0.5 * math.pi) * gt.norm + TWO_OVER_PI * gt.sigma


def expect_tanh_ax_x(A: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """E[tanh(A X) X] for X the product of two independent standard normals."""
    if not A > 0:
        raise ValidationError(f"A must be positive, got {A}")
    return tanh_moments(A, 0.0, 0.0, quad).with_q


def orthogonal_contraction(k: float, eta: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """||M||/||theta*|| for theta = k ||theta*|| e_perp with nu = 0."""
    r = math.hypot(1.0, 1.0 / eta)
    return r * expect_tanh_ax_x(k * eta * eta * r, quad) if k > 0 else 0.0


def k_star_bounds(eta: float) -> tuple[float, float]:
    """Open interval (1/sqrt 3, min((2/pi) sqrt(1 + eta^-2), 1)) containing k*(eta)."""
    return 1.0 / math.sqrt(3.0), min(TWO_OVER_PI * math.hypot(1.0, 1.0 / eta), 1.0)


def k_star(eta: float, quad: QuadratureSpec = DEFAULT_QUAD, tol: float = 1e-10, bracket: tuple[float, float] = (0.5, 1.05)) -> float:
    """Root of sqrt(1 + eta^-2) E[tanh(k eta^2 sqrt(1 + eta^-2) X) X] - k by bisection."""
    if not eta > 0:
        raise ValidationError(f"eta must be positive, got {eta}")
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}")

    def gap(k: float) -> float:
        return orthogonal_contraction(k, eta, quad) - k

    lo, hi = bracket
    g_lo, g_hi = gap(lo), gap(hi)
    if not (g_lo > 0 > g_hi):
        raise NumericalError(
            f"no sign change on [{lo}, {hi}] at eta={eta}: gaps {g_lo:.3e}, {g_hi:.3e}; "
            "quadrature may be under-resolved"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _balanced_truth(eta: float) -> GroundTruth:
    return make_ground_truth(np.array([1.0, 0.0]), 0.5, 1.0 / eta)


def deviation_lambda(k: float, varphi: float, eta: float) -> float:
    """eta sqrt(k) cos(varphi), the scale governing the log-factor term."""
    return eta * math.sqrt(k) * math.cos(varphi)


def deviation_from_limit(k: float, varphi: float, eta: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """||M(theta) - lim_{eta->inf} M(theta)|| / ||theta*|| with balanced weights and nu = 0."""
    gt = _balanced_truth(eta)
    theta = k * np.array([math.sin(varphi), math.cos(varphi)])
    diff = m_general(theta, 0.0, gt, quad) - m_noiseless(theta, gt)
    return float(np.linalg.norm(diff))


# --------------------------------------------------------------------------
# Gaussian sign-product identities and product-normal moments


def sign_product_expectations(varphi: float) -> tuple[float, float, float]:
    """(E sgn(g g'), E|g g'|, E g^2 sgn(g g')) for unit normals with correlation sin(varphi)."""
    if not -0.5 * math.pi <= varphi <= 0.5 * math.pi:
        raise ValidationError(f"varphi must lie in [-pi/2, pi/2], got {varphi}")
    s, c = math.sin(varphi), math.cos(varphi)
    return (
        TWO_OVER_PI * varphi,
        TWO_OVER_PI * (varphi * s + c),
        TWO_OVER_PI * (varphi + s * c),
    )


def sign_product_by_quadrature(varphi: float, nodes: int = 64) -> tuple[float, float, float]:
    """The same three expectations by angular quadrature split at the sign changes."""
    s, c = math.sin(varphi), math.cos(varphi)
    breaks = [0.5 * math.pi, 1.5 * math.pi, -varphi, math.pi - varphi]

    def gp(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return s * a + c * b

    return (
        homogeneous_expectation(lambda a, b: np.sign(a * gp(a, b)), 0, breaks, nodes),
        homogeneous_expectation(lambda a, b: np.abs(a * gp(a, b)), 2, breaks, nodes),
        homogeneous_expectation(lambda a, b: a * a * np.sign(a * gp(a, b)), 2, breaks, nodes),
    )


def verify_sign_product_expectations(varphi: float, tol: float = 1e-6) -> tuple[bool, float]:
    """Closed forms against quadrature; returns (passed, max abs residual)."""
    closed = sign_product_expectations(varphi)
    quad = sign_product_by_quadrature(varphi)
    resid = max(abs(a - b) for a, b in zip(closed, quad))
    return resid <= tol, resid


def product_normal_moment(power: int, nodes: int = 32) -> float:
    """E[X^power] for X = u v, u, v independent standard normals (tensor Gauss-Hermite)."""
    return gauss_hermite_expectation(lambda a, b: (a * b) ** power, nodes)


def double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1
