"""Sub-optimality angles, the plane frame spanned by iterate and truth, and the cycloid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from mlr_em.errors import DegenerateModelError
from mlr_em.model import GroundTruth

COLLINEAR_TOL = 1e-12


@dataclass(frozen=True)
class AngleDiagnostics:
    rho: float
    sgn_rho: float
    varphi: float
    phi: float
    k: float
    # cos(varphi) and sin(varphi) kept separately: near convergence
    # cos(varphi) is tiny and recomputing it from varphi loses all digits
    cos_varphi: float = 0.0
    sin_varphi: float = 0.0
    degenerate: bool = False


def _split(theta: np.ndarray, e: np.ndarray) -> tuple[float, np.ndarray]:
    par = float(theta @ e)
    return par, theta - par * e


def angle_diagnostics(theta: np.ndarray, gt: GroundTruth) -> AngleDiagnostics:
    """Angles between ``theta`` and the truth.

    Angles come from atan2 of the parallel and perpendicular parts rather
    than arccos of the cosine, which keeps full relative precision of phi
    when the iterate is nearly collinear with the truth.
    """
    if gt.is_degenerate:
        raise DegenerateModelError("theta_star is zero; angles are undefined")
    theta = np.asarray(theta, dtype=float)
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        return AngleDiagnostics(0.0, 1.0, 0.0, math.pi, 0.0, 1.0, 0.0, True)
    par, rest = _split(theta, gt.direction)
    perp = float(np.linalg.norm(rest))
    rho = max(-1.0, min(1.0, par / norm))
    sgn = 1.0 if rho >= 0.0 else -1.0
    half = math.atan2(perp, abs(par))  # arccos|rho|
    hyp = math.hypot(perp, par)
    return AngleDiagnostics(
        rho=rho,
        sgn_rho=sgn,
        varphi=math.atan2(abs(par), perp),
        phi=2.0 * half,
        k=norm / gt.norm,
        cos_varphi=perp / hyp,
        sin_varphi=abs(par) / hyp,
    )


@dataclass(frozen=True)
class PlaneFrame:
    e_hat_1: np.ndarray
    e_hat_2: np.ndarray
    e_1: np.ndarray
    e_2: np.ndarray
    degenerate: bool = False

    def coordinates(self, v: np.ndarray, scale: float = 1.0) -> tuple[float, float, float]:
        """(x, y, out-of-plane norm) of ``v`` in the (e_hat_1, e_hat_2) frame, divided by ``scale``."""
        x = float(v @ self.e_hat_1)
        y = float(v @ self.e_hat_2)
        off = float(np.linalg.norm(v - x * self.e_hat_1 - y * self.e_hat_2))
        return x / scale, y / scale, off / scale


def orthogonal_completion(u: np.ndarray) -> np.ndarray:
    """Deterministic unit vector orthogonal to unit ``u``: the first coordinate
    axis not nearly aligned with ``u``, with its ``u`` component removed."""
    d = u.size
    if d < 2:
        return np.zeros_like(u)
    j = int(np.flatnonzero(np.abs(u) < 0.9)[0])
    v = np.zeros_like(u)
    v[j] = 1.0
    v -= (v @ u) * u
    return v / np.linalg.norm(v)


def _unit_residual(v: np.ndarray, u: np.ndarray) -> np.ndarray | None:
    """Unit part of ``v`` orthogonal to unit ``u`` (two Gram-Schmidt passes), or None if it vanishes."""
    r = v - (v @ u) * u
    r -= (r @ u) * u
    n = float(np.linalg.norm(r))
    return r / n if n > 0.0 else None


def plane_frame(theta: np.ndarray, gt: GroundTruth) -> PlaneFrame:
    """Orthonormal frames of span{theta, theta*} anchored at theta* and at theta.

    Nearly collinear pairs (|rho| > 1 - 1e-12) are flagged.  Their second
    axes still follow the actual residual so that orientation-dependent
    terms keep the right sign; only an exactly collinear pair falls back to
    a deterministic orthogonal completion.
    """
    if gt.is_degenerate:
        raise DegenerateModelError("theta_star is zero; frame is undefined")
    theta = np.asarray(theta, dtype=float)
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        raise DegenerateModelError("theta is zero; frame is undefined")
    eh1 = gt.direction
    e1 = theta / norm
    flagged = abs(float(e1 @ eh1)) > 1.0 - COLLINEAR_TOL
    eh2 = _unit_residual(e1, eh1)
    e2 = _unit_residual(eh1, e1)
    if eh2 is None or e2 is None:
        return PlaneFrame(eh1, orthogonal_completion(eh1), e1, orthogonal_completion(e1), True)
    return PlaneFrame(eh1, eh2, e1, e2, flagged)


def _phi_minus_sin(phi: np.ndarray) -> np.ndarray:
    small = np.abs(phi) < 1e-2
    p2 = phi * phi
    series = phi * p2 / 6.0 * (1.0 - p2 / 20.0 * (1.0 - p2 / 42.0))
    return np.where(small, series, phi - np.sin(phi))


def cycloid_point(phi_prev: float | np.ndarray, sgn_rho0: float) -> tuple:
    """Point of the noiseless trajectory generated from angle ``phi_prev``.

    Coordinates are along (truth direction, initial orthogonal direction) in
    units of the truth norm:  1 - s x = (phi - sin phi)/pi,  y = (1 - cos phi)/pi.
    """
    phi = np.clip(np.asarray(phi_prev, dtype=float), 0.0, math.pi)
    s = 1.0 if sgn_rho0 >= 0 else -1.0
    x = s * (1.0 - _phi_minus_sin(phi) / math.pi)
    y = 2.0 * np.sin(0.5 * phi) ** 2 / math.pi
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def distance_to_cycloid(point: tuple[float, float], sgn_rho0: float, grid: int = 10_001) -> float:
    """Euclidean distance from a plane point to the arc phi in [0, pi].

    Dense grid search followed by bounded Brent refinement in the bracketing
    cell; the cusp at phi = 0 is an endpoint, so no derivative is needed.
    """
    px, py = float(point[0]), float(point[1])
    grid = max(int(grid), 10_001)
    ts = np.linspace(0.0, math.pi, grid)
    xs, ys = cycloid_point(ts, sgn_rho0)
    d2 = (xs - px) ** 2 + (ys - py) ** 2
    i = int(np.argmin(d2))
    best = float(d2[i])
    lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, grid - 1)]

    def dist2(t: float) -> float:
        cx, cy = cycloid_point(t, sgn_rho0)
        return (cx - px) ** 2 + (cy - py) ** 2

    # bounded Brent's tolerance is relative to |x|, so refine an offset from
    # the current centre and shrink the bracket around each result
    centre, half = float(ts[i]), float(max(hi - ts[i], ts[i] - lo))
    for _ in range(3):
        a, b = max(lo, centre - half) - centre, min(hi, centre + half) - centre
        res = minimize_scalar(lambda u, c=centre: dist2(c + u), bounds=(a, b), method="bounded",
                              options={"xatol": 1e-15})
        best = min(best, float(res.fun))
        centre, half = centre + float(res.x), 1e-3 * half
    best = min(best, dist2(0.0), dist2(math.pi))
    return math.sqrt(best)
