"""``mlr-em`` command line: one subcommand per experiment.

Exit status is 0 when every check of the run passes, 1 when a check fails
and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Sequence

from mlr_em.errors import ValidationError
from mlr_em.harness import EXPERIMENTS, ExperimentConfig, run_experiment, write_result


def _snr(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"snr must be positive or 'inf', got {text!r}")
    return val


def _float_list(text: str) -> list[float]:
    try:
        return [_snr(t) if t.strip().lower().startswith("inf") else float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlr-em", description="EM for symmetric two-component mixed linear regression")
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--d", type=int, default=2)
        s.add_argument("--n", type=int, default=5000)
        s.add_argument("--snr", type=_snr, default=math.inf, help="eta = ||theta*|| / sigma, or 'inf'")
        s.add_argument("--trials", type=int, default=1)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--pi1", type=float, default=None, help="weight of the +theta* component (random per trial if omitted)")
        init = s.add_mutually_exclusive_group()
        init.add_argument("--varphi0", type=float, default=None, help="initial pi/2 - arccos|rho|")
        init.add_argument("--phi0", type=float, default=None, help="initial 2 arccos|rho|")
        init.add_argument("--random-init", action="store_true")
        s.add_argument("--eta-grid", type=_float_list, default=None)
        s.add_argument("--n-grid", type=_int_list, default=None)
        s.add_argument("--d-grid", type=_int_list, default=None)
        s.add_argument("--pi1-grid", type=_float_list, default=None)
        s.add_argument("--iters", type=int, default=None)
        s.add_argument("--eps-phi", type=float, default=1e-6)
        s.add_argument("--k", type=float, default=1.0)
        s.add_argument("--delta", type=float, default=0.01)
        s.add_argument("--nodes", type=int, default=128)
        s.add_argument("--out", default=None)
        s.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig(**vars(args))
        res = run_experiment(cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.out is not None and cfg.experiment != "generate":
        for path in write_result(res, cfg.out, cfg.format):
            print(f"wrote {path}")
    elif cfg.out is None and cfg.format == "json":
        print(json.dumps(res.document(), indent=2))
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return 0 if res.passed else 1


if __name__ == "__main__":
    sys.exit(main())
