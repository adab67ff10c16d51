"""Per-iteration diagnostics shared by the population and finite-sample runners."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from mlr_em.geometry import PlaneFrame, angle_diagnostics
from mlr_em.model import GroundTruth

CSV_COLUMNS = ("t", "theta_err", "weight_err", "varphi", "phi", "nll", "out_of_plane")


@dataclass(frozen=True)
class TrajectoryRecord:
    t: int
    theta_err: float
    weight_err: float
    varphi: float
    phi: float
    nll: float | None
    out_of_plane: float
    rho: float = math.nan
    k: float = math.nan
    tanh_nu: float = math.nan
    plane_x: float = math.nan
    plane_y: float = math.nan
    phase: str = ""
    theta: np.ndarray | None = field(default=None, repr=False, compare=False)

    def row(self) -> dict[str, float | int | str]:
        return {
            "t": self.t,
            "theta_err": self.theta_err,
            "weight_err": self.weight_err,
            "varphi": self.varphi,
            "phi": self.phi,
            "nll": "" if self.nll is None else self.nll,
            "out_of_plane": self.out_of_plane,
        }


def make_record(
    t: int,
    theta: np.ndarray,
    tanh_nu: float,
    gt: GroundTruth | None,
    frame0: PlaneFrame | None,
    nll: float | None = None,
    phase: str = "",
) -> TrajectoryRecord:
    """Diagnostics of one iterate against the truth (NaN fields without truth).

    Errors are sign-aligned with the iterate: theta is compared to
    sgn(rho) theta* and the weights to 1/2 + sgn(rho)(pi* - 1/2).
    """
    theta = np.array(theta, dtype=float, copy=True)
    if gt is None or gt.is_degenerate:
        return TrajectoryRecord(t, math.nan, math.nan, math.nan, math.nan, nll, math.nan,
                                tanh_nu=tanh_nu, phase=phase, theta=theta)
    diag = angle_diagnostics(theta, gt)
    s = diag.sgn_rho
    theta_err = float(np.linalg.norm(theta - s * gt.theta_star)) / gt.norm
    weight_err = abs(tanh_nu - s * gt.tanh_nu_star)
    if frame0 is not None:
        x, y, off = frame0.coordinates(theta, gt.norm)
    else:
        x = y = off = math.nan
    return TrajectoryRecord(
        t=t,
        theta_err=theta_err,
        weight_err=weight_err,
        varphi=diag.varphi,
        phi=diag.phi,
        nll=nll,
        out_of_plane=off,
        rho=diag.rho,
        k=diag.k,
        tanh_nu=tanh_nu,
        plane_x=x,
        plane_y=y,
        phase=phase,
        theta=theta,
    )


def write_records_csv(records: Iterable[TrajectoryRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r.row())
    return path


class Trajectory(list):
    """List of records plus condition flags raised while running."""

    def __init__(self, records: Iterable[TrajectoryRecord] = (), flags: Iterable[str] = ()) -> None:
        super().__init__(records)
        self.flags: set[str] = set(flags)
