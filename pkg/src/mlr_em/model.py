"""Data-generating process: ground truth, mixing weights and synthetic datasets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mlr_em.errors import ValidationError

SEED_LIMIT = 2**64


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Hash (master seed, trial index) into an independent 64-bit stream seed.

    The result depends only on the pair, so trials can be scheduled in any
    order or in parallel without changing their data.
    """
    ss = np.random.SeedSequence([_check_seed(master_seed), int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(_check_seed(seed)))


@dataclass(frozen=True)
class MixingImbalance:
    """Imbalance nu with tanh(nu) = pi1 - pi2; nu may be +-inf."""

    nu: float
    tanh_nu: float

    def __post_init__(self) -> None:
        if math.isnan(self.nu) or not -1.0 <= self.tanh_nu <= 1.0:
            raise ValidationError(f"invalid imbalance nu={self.nu}, tanh={self.tanh_nu}")
        if math.isinf(self.nu) != (abs(self.tanh_nu) == 1.0):
            raise ValidationError("tanh_nu is +-1 exactly when nu is infinite")

    @classmethod
    def from_nu(cls, nu: float) -> MixingImbalance:
        nu = float(nu)
        if math.isinf(nu):
            return cls(nu, math.copysign(1.0, nu))
        t = math.tanh(nu)
        if abs(t) == 1.0:
            # finite nu whose tanh rounds to +-1: keep the finite value but
            # back off one ulp so the encoding stays unambiguous
            t = math.copysign(math.nextafter(1.0, 0.0), nu)
        return cls(nu, t)

    @classmethod
    def from_tanh(cls, t: float) -> MixingImbalance:
        t = float(t)
        if not -1.0 <= t <= 1.0:
            raise ValidationError(f"tanh_nu must lie in [-1, 1], got {t}")
        if abs(t) == 1.0:
            return cls(math.copysign(math.inf, t), t)
        return cls(math.atanh(t), t)

    @property
    def weights(self) -> tuple[float, float]:
        return weights_of_nu(self)


def weights_of_nu(nu: float | MixingImbalance) -> tuple[float, float]:
    """(pi1, pi2) = ((1 + tanh nu)/2, (1 - tanh nu)/2)."""
    t = nu.tanh_nu if isinstance(nu, MixingImbalance) else MixingImbalance.from_nu(nu).tanh_nu
    return (0.5 * (1.0 + t), 0.5 * (1.0 - t))


def nu_of_weights(pi: Sequence[float]) -> MixingImbalance:
    """Inverse of :func:`weights_of_nu` for a probability pair."""
    if len(pi) != 2:
        raise ValidationError("expected a pair of probabilities")
    p1, p2 = float(pi[0]), float(pi[1])
    if not (0.0 <= p1 <= 1.0 and 0.0 <= p2 <= 1.0):
        raise ValidationError(f"probabilities must lie in [0, 1], got {pi}")
    if abs(p1 + p2 - 1.0) > 1e-12:
        raise ValidationError(f"probabilities must sum to 1, got {p1 + p2}")
    t = p1 - p2
    if p2 == 0.0:
        return MixingImbalance(math.inf, 1.0)
    if p1 == 0.0:
        return MixingImbalance(-math.inf, -1.0)
    # logs keep full precision when one weight is tiny
    return MixingImbalance(0.5 * (math.log(p1) - math.log(p2)), max(-1.0, min(1.0, t)))


@dataclass(frozen=True)
class GroundTruth:
    theta_star: np.ndarray
    pi_star: tuple[float, float]
    sigma: float

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta_star, dtype=float)
        if theta.ndim != 1 or theta.size < 1:
            raise ValidationError("theta_star must be a non-empty vector")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("theta_star must be finite")
        if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValidationError(f"sigma must be finite and nonnegative, got {self.sigma}")
        object.__setattr__(self, "theta_star", _frozen(theta))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return self.theta_star.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.theta_star))

    @property
    def is_degenerate(self) -> bool:
        return self.norm == 0.0

    @property
    def direction(self) -> np.ndarray:
        return self.theta_star / self.norm

    @property
    def eta(self) -> float:
        if self.sigma == 0.0:
            return math.inf if self.norm > 0 else math.nan
        return self.norm / self.sigma

    @property
    def imbalance(self) -> MixingImbalance:
        return nu_of_weights(self.pi_star)

    @property
    def nu_star(self) -> float:
        return self.imbalance.nu

    @property
    def tanh_nu_star(self) -> float:
        return self.imbalance.tanh_nu


def make_ground_truth(theta_star: Sequence[float] | np.ndarray, pi1: float, sigma: float) -> GroundTruth:
    pi1 = float(pi1)
    if not (math.isfinite(pi1) and 0.0 <= pi1 <= 1.0):
        raise ValidationError(f"pi1 must lie in [0, 1], got {pi1}")
    return GroundTruth(np.asarray(theta_star, dtype=float), (pi1, 1.0 - pi1), float(sigma))


@dataclass(frozen=True)
class Dataset:
    """Immutable sample. Labels ``z`` are kept for diagnostics only."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None
    seed: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValidationError(f"shape mismatch: x {x.shape}, y {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("dataset rows must be finite")
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))
        if self.z is not None:
            z = np.array(self.z, dtype=np.int8, copy=True)
            if z.shape != y.shape or not np.all((z == 1) | (z == 2)):
                raise ValidationError("labels must be a vector in {1, 2}")
            z.setflags(write=False)
            object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def without_labels(self) -> Dataset:
        return Dataset(self.x, self.y, None, self.seed)

    def subset(self, idx: np.ndarray) -> Dataset:
        z = None if self.z is None else self.z[idx]
        return Dataset(self.x[idx], self.y[idx], z, self.seed)


def generate_dataset(gt: GroundTruth, n: int, seed: int) -> Dataset:
    """Draw n i.i.d. pairs: x ~ N(0, I), z ~ Cat(pi*), y = (-1)^(z+1) <x, theta*> + sigma eps."""
    n = int(n)
    if n < 0:
        raise ValidationError(f"n must be nonnegative, got {n}")
    rng = make_rng(seed)
    x = rng.standard_normal((n, gt.d))
    z = np.where(rng.random(n) < gt.pi_star[0], 1, 2).astype(np.int8)
    eps = rng.standard_normal(n)
    sign = np.where(z == 1, 1.0, -1.0)
    y = sign * (x @ gt.theta_star)
    if gt.sigma > 0.0:
        y = y + gt.sigma * eps
    return Dataset(x, y, z, int(seed))


def save_dataset(ds: Dataset, gt: GroundTruth, path: str | Path) -> tuple[Path, Path]:
    """Write ``path`` as CSV (``x_0..x_{d-1},y[,z]``) plus a JSON manifest sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [f"x_{j}" for j in range(ds.d)] + ["y"]
    table = np.column_stack([ds.x, ds.y])
    if ds.z is not None:
        cols.append("z")
        table = np.column_stack([table, ds.z])
    fmt = ["%.17g"] * (ds.d + 1) + (["%d"] if ds.z is not None else [])
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        np.savetxt(fh, table, delimiter=",", header=",".join(cols), comments="", fmt=fmt)
    manifest = {
        "d": ds.d,
        "n": ds.n,
        "seed": ds.seed,
        "sigma": gt.sigma,
        "pi1": gt.pi_star[0],
        "theta_star": gt.theta_star.tolist(),
    }
    side = path.with_suffix(".json")
    side.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path, side


def load_dataset(path: str | Path) -> tuple[Dataset, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = manifest["d"]
    if table.size == 0:
        table = np.zeros((0, len(header)))
    z = table[:, d + 1].astype(np.int8) if "z" in header else None
    return Dataset(table[:, :d], table[:, d], z, int(manifest["seed"])), manifest
