"""Finite-sample EM: standard and Easy updates, likelihood, schedules and error probes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from mlr_em.errors import IllConditionedError, ValidationError
from mlr_em.geometry import plane_frame
from mlr_em.model import Dataset, GroundTruth, MixingImbalance, make_rng
from mlr_em.population import DEFAULT_QUAD, general_update
from mlr_em.quadrature import QuadratureSpec
from mlr_em.trajectory import Trajectory, make_record

COND_LIMIT = 1e12
SATURATION = 40.0
TANH_CLAMP = 1.0 - 1e-15
STEP_TOL = 1e-12


@dataclass(frozen=True)
class EMState:
    theta: np.ndarray
    nu: float = 0.0

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=float, copy=True)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise ValidationError("theta must be a finite vector")
        if math.isnan(self.nu):
            raise ValidationError("nu must not be NaN")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def tanh_nu(self) -> float:
        return MixingImbalance.from_nu(self.nu).tanh_nu

    @property
    def weights(self) -> tuple[float, float]:
        return MixingImbalance.from_nu(self.nu).weights


@dataclass(frozen=True)
class Schedule:
    t0_easy_init: int = 0
    t1_easy: int = 0
    t_standard_max: int = 50
    eps_phi: float = 1e-12
    delta: float = 0.01  # recorded only; no runtime effect

    def __post_init__(self) -> None:
        if min(self.t0_easy_init, self.t1_easy, self.t_standard_max) < 0:
            raise ValidationError("iteration counts must be nonnegative")
        if not self.eps_phi > 0:
            raise ValidationError("eps_phi must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValidationError("delta must lie in (0, 1)")


# --------------------------------------------------------------------------
# E-step weights


def noiseless_weights(y: np.ndarray | float, inner: np.ndarray | float, nu: float) -> np.ndarray | float:
    """sgn(y * inner), with ties resolved as tanh(nu)."""
    prod = np.asarray(y, dtype=float) * np.asarray(inner, dtype=float)
    tie = MixingImbalance.from_nu(nu).tanh_nu
    out = np.where(prod > 0, 1.0, np.where(prod < 0, -1.0, tie))
    return float(out) if out.ndim == 0 else out


def posterior_weights(ds: Dataset, theta: np.ndarray, nu: float, sigma: float) -> np.ndarray:
    """tanh(y <x, theta> / sigma^2 + nu), the difference of the two responsibilities."""
    inner = ds.x @ np.asarray(theta, dtype=float)
    if sigma == 0.0:
        return noiseless_weights(ds.y, inner, nu)
    if math.isinf(nu):
        return np.full(ds.n, math.copysign(1.0, nu))
    z = ds.y * inner / (sigma * sigma) + nu
    return np.where(np.abs(z) > SATURATION, np.sign(z), np.tanh(z))


def _nu_from_mean(n_mean: float) -> float:
    if n_mean >= TANH_CLAMP:
        return math.inf
    if n_mean <= -TANH_CLAMP:
        return -math.inf
    return math.atanh(n_mean)


# --------------------------------------------------------------------------
# covariance solve


class CovarianceFactor(NamedTuple):
    q: np.ndarray
    r: np.ndarray
    cond: float  # condition number of the sample covariance


def covariance_factor(ds: Dataset) -> CovarianceFactor:
    """Thin QR of the design; cached on the dataset.

    Solving R theta = Q^T v gives (X^T X)^{-1} X^T v without forming the
    covariance or its inverse, and cond(X^T X / n) = cond(R)^2.
    """
    hit = ds._cache.get("qr")
    if hit is not None:
        return hit
    n, d = ds.n, ds.d
    if n < d:
        raise IllConditionedError(f"sample covariance is singular: n={n} < d={d}")
    q, r = np.linalg.qr(ds.x, mode="reduced")
    sv = np.linalg.svd(r, compute_uv=False)
    cond = math.inf if sv[-1] == 0 else float((sv[0] / sv[-1]) ** 2)
    if cond > COND_LIMIT:
        raise IllConditionedError(f"sample covariance condition {cond:.3e} exceeds {COND_LIMIT:.0e} (n={n}, d={d})")
    fac = CovarianceFactor(q, r, cond)
    ds._cache["qr"] = fac
    return fac


# --------------------------------------------------------------------------
# updates


def em_step(ds: Dataset, s: EMState, sigma: float) -> EMState:
    """Standard update: theta' solves Sigma_hat theta' = mean(w y x), tanh nu' = mean(w)."""
    w = posterior_weights(ds, s.theta, s.nu, sigma)
    fac = covariance_factor(ds)
    theta = solve_triangular(fac.r, fac.q.T @ (w * ds.y))
    return EMState(theta, _nu_from_mean(float(w.mean())))


def easy_em_step(ds: Dataset, s: EMState, sigma: float) -> EMState:
    """Update without the covariance solve: theta' = mean(w y x)."""
    if ds.n < 1:
        raise ValidationError("easy EM needs at least one sample")
    w = posterior_weights(ds, s.theta, s.nu, sigma)
    theta = ds.x.T @ (w * ds.y) / ds.n
    return EMState(theta, _nu_from_mean(float(w.mean())))


# --------------------------------------------------------------------------
# likelihood


def log_cosh(a: np.ndarray) -> np.ndarray:
    a = np.abs(a)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def nll(ds: Dataset, s: EMState, sigma: float) -> float:
    """Average negative conditional log-likelihood of y given x.

    f = <theta, Sigma_hat theta>/2s^2 - mean ln(cosh(a + nu)/cosh nu) + mean(y^2)/2s^2 + ln(2 pi s^2)/2
    with a = y <x, theta>/s^2.  The covariate density term is left out; it
    does not depend on (theta, nu).
    """
    if not sigma > 0:
        raise ValidationError("the likelihood needs sigma > 0")
    fit = ds.x @ s.theta
    s2 = sigma * sigma
    a = ds.y * fit / s2
    if math.isinf(s.nu):
        mix = math.copysign(1.0, s.nu) * a
    else:
        mix = log_cosh(a + s.nu) - log_cosh(np.array(s.nu))
    quad = (np.mean(fit * fit) + np.mean(ds.y * ds.y)) / (2.0 * s2)
    return float(quad - np.mean(mix) + 0.5 * math.log(2.0 * math.pi * s2))


def nll_gradient(ds: Dataset, s: EMState, sigma: float) -> tuple[np.ndarray, float]:
    """Gradient via the EM map: (Sigma_hat (theta - M_n)/sigma^2, tanh nu - N_n)."""
    nxt = em_step(ds, s, sigma)
    diff = ds.x @ (s.theta - nxt.theta)
    g_theta = ds.x.T @ diff / ds.n / (sigma * sigma)
    return g_theta, s.tanh_nu - nxt.tanh_nu


def nll_gradient_identity_check(
    ds: Dataset, s: EMState, sigma: float, h: float = 1e-5, nu_only: bool = False
) -> tuple[float, float]:
    """Central differences of :func:`nll` against :func:`nll_gradient`.

    Residuals are ||fd - identity|| / max(||identity||, 1).
    """
    if not sigma > 0:
        raise ValidationError("the likelihood needs sigma > 0")
    if not 1e-6 <= h <= 1e-3:
        raise ValidationError(f"relative step must lie in [1e-6, 1e-3], got {h}")
    if not math.isfinite(s.nu):
        raise ValidationError("finite differences need a finite nu")
    g_theta, g_nu = nll_gradient(ds, s, sigma)

    def f(theta: np.ndarray, nu: float) -> float:
        return nll(ds, EMState(theta, nu), sigma)

    hn = h * max(1.0, abs(s.nu))
    fd_nu = (f(s.theta, s.nu + hn) - f(s.theta, s.nu - hn)) / (2.0 * hn)
    r_nu = abs(fd_nu - g_nu) / max(abs(g_nu), 1.0)
    if nu_only:
        return math.nan, r_nu
    fd = np.empty_like(g_theta)
    for j in range(g_theta.size):
        hj = h * max(1.0, abs(s.theta[j]))
        up = np.array(s.theta)
        dn = np.array(s.theta)
        up[j] += hj
        dn[j] -= hj
        fd[j] = (f(up, s.nu) - f(dn, s.nu)) / (2.0 * hj)
    r_theta = float(np.linalg.norm(fd - g_theta) / max(np.linalg.norm(g_theta), 1.0))
    return r_theta, r_nu


# --------------------------------------------------------------------------
# initialization and schedules


def random_unit_state(d: int, seed: int) -> EMState:
    v = make_rng(seed).standard_normal(d)
    return EMState(v / np.linalg.norm(v), 0.0)


def _folds(n: int, t0: int, seed: int, fold_size: int | None) -> list[np.ndarray]:
    size = n // t0 if fold_size is None else int(fold_size)
    if size < 1 or t0 * size > n:
        need = t0 * max(size, 1)
        raise ValidationError(f"sample splitting needs n >= {need} for {t0} folds of {max(size, 1)}, got n={n}")
    perm = make_rng(seed).permutation(n)
    return [perm[i * size:(i + 1) * size] for i in range(t0)]


def init_easy_split(
    ds: Dataset,
    t0: int,
    seed: int,
    sigma: float,
    start: EMState | None = None,
    fold_size: int | None = None,
) -> EMState:
    """Easy EM on t0 disjoint folds, one fresh fold per step."""
    state = random_unit_state(ds.d, seed) if start is None else start
    if t0 == 0:
        return state
    for idx in _folds(ds.n, t0, seed, fold_size):
        state = easy_em_step(ds.subset(idx), state, sigma)
    return state


def _relative_step(new: np.ndarray, old: np.ndarray) -> float:
    base = float(np.linalg.norm(old))
    diff = float(np.linalg.norm(new - old))
    return diff / base if base > 0 else (0.0 if diff == 0 else math.inf)


def run_em(
    ds: Dataset,
    s0: EMState,
    sched: Schedule,
    sigma: float,
    gt: GroundTruth | None = None,
    init_seed: int = 0,
    record_nll: bool = True,
) -> Trajectory:
    """Split-sample Easy init, then Easy EM, then standard EM, with per-step records.

    With a ground truth the run stops once phi <= eps_phi; otherwise once
    the relative change of theta drops to 1e-12.
    """
    use_nll = record_nll and sigma > 0
    frame0 = None
    if gt is not None and not gt.is_degenerate and np.linalg.norm(s0.theta) > 0:
        frame0 = plane_frame(s0.theta, gt)

    def record(t: int, st: EMState, phase: str):
        val = nll(ds, st, sigma) if use_nll else None
        return make_record(t, st.theta, st.tanh_nu, gt, frame0, nll=val, phase=phase)

    recs = Trajectory([record(0, s0, "start")])
    if gt is not None and recs[-1].phi <= sched.eps_phi:
        recs.flags.add("converged")
        return recs
    steps: list[tuple[str, Dataset, object]] = []
    if sched.t0_easy_init:
        steps += [("init", ds.subset(idx), easy_em_step) for idx in _folds(ds.n, sched.t0_easy_init, init_seed, None)]
    steps += [("easy", ds, easy_em_step)] * sched.t1_easy
    steps += [("standard", ds, em_step)] * sched.t_standard_max
    state = s0
    for t, (phase, data, step) in enumerate(steps, start=1):
        nxt = step(data, state, sigma)
        recs.append(record(t, nxt, phase))
        if gt is not None:
            done = recs[-1].phi <= sched.eps_phi
        else:
            done = phase == "standard" and _relative_step(nxt.theta, state.theta) <= STEP_TOL
        state = nxt
        if done:
            recs.flags.add("converged")
            break
    return recs


# --------------------------------------------------------------------------
# statistical error of the Easy map


class StatisticalErrors(NamedTuple):
    full: float
    projected: float
    weight: float


def statistical_error_sample(
    ds: Dataset, s: EMState, gt: GroundTruth, quad: QuadratureSpec = DEFAULT_QUAD
) -> StatisticalErrors:
    """||M_n^easy - M||, its part inside span{theta, theta*}, and |N_n - N|, over ||theta*||."""
    w = posterior_weights(ds, s.theta, s.nu, gt.sigma)
    m_easy = ds.x.T @ (w * ds.y) / ds.n
    n_easy = float(w.mean())
    m_pop, n_pop = general_update(s.theta, s.nu, gt, quad)
    diff = m_easy - m_pop
    frame = plane_frame(s.theta, gt)
    basis = [frame.e_hat_1] if frame.degenerate else [frame.e_hat_1, frame.e_hat_2]
    proj = math.sqrt(sum(float(diff @ b) ** 2 for b in basis))
    return StatisticalErrors(float(np.linalg.norm(diff)) / gt.norm, proj / gt.norm, abs(n_easy - n_pop))
