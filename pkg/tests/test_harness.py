import json
import math

import jsonschema
import pytest

from mlr_em.cli import main
from mlr_em.errors import ValidationError
from mlr_em.harness import (
    RESULT_SCHEMA_STRING,
    ExperimentConfig,
    config_from_manifest,
    fit_loglog_slope,
    fit_through_origin,
    run_experiment,
    statistical_floor,
    validate_document,
)


def test_slope_of_exact_square():
    slope, icpt, se = fit_loglog_slope([(x, x * x) for x in (1, 2, 4, 8)])
    assert abs(slope - 2.0) <= 1e-12 and abs(icpt) <= 1e-12 and se <= 1e-12


def test_slope_of_inverse_root():
    slope, icpt, _ = fit_loglog_slope([(x, 3.0 / math.sqrt(x)) for x in (10, 100, 1000, 1e4)])
    assert slope == pytest.approx(-0.5, abs=1e-12)
    assert icpt == pytest.approx(math.log(3.0), abs=1e-12)


@pytest.mark.parametrize("pts", [[(2, 1), (2, 3), (2, 5)], [(1, 1), (2, 2)], [(1, 1), (2, -2), (3, 3)]])
def test_slope_rejects_bad_points(pts):
    with pytest.raises(ValidationError):
        fit_loglog_slope(pts)


def test_origin_fit_and_floor():
    assert fit_through_origin([1, 2, 3], [2, 4, 6]) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(ValidationError):
        fit_through_origin([0, 0], [1, 2])
    assert statistical_floor(10, 1000, 0.01) == pytest.approx(0.1, abs=1e-15)


@pytest.mark.parametrize(
    "kw",
    [{"trials": 0}, {"varphi0": 0.3, "phi0": 1.0}, {"format": "xml"}, {"experiment": "plot"}, {"pi1": 1.5}],
)
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        ExperimentConfig(**{"experiment": "trajectory", **kw})


def test_exit_codes(capsys):
    assert main(["identities", "--d", "3", "--n", "500", "--snr", "2"]) == 0
    out = capsys.readouterr().out
    assert "PASS gradient identity" in out and "FAIL" not in out
    assert main(["quad_convergence", "--iters", "1"]) == 1
    assert "FAIL" in capsys.readouterr().out
    assert main(["scaling", "--d", "10", "--n-grid", "5,1000,10000"]) == 2
    assert "n in the grid" in capsys.readouterr().err


def test_csv_outputs_and_manifest(tmp_path, capsys):
    out = tmp_path / "run" / "traj.csv"
    assert main(["trajectory", "--d", "3", "--trials", "2", "--seed", "4", "--iters", "5", "--out", str(out)]) == 0
    for name in ("traj.csv", "traj_cycloid.csv", "traj.manifest.json"):
        raw = (out.parent / name).read_bytes()
        assert b"\r\n" not in raw
        raw.decode("utf-8")
    header = (out.parent / "traj.csv").read_text().splitlines()[0]
    assert header == "trial,t,x,y,out_of_plane,phi_prev,sgn_rho0,distance"
    assert len((out.parent / "traj_cycloid.csv").read_text().splitlines()) == 1001
    meta = json.loads((out.parent / "traj.manifest.json").read_text())
    assert meta["manifest"]["config"]["snr"] == "inf"
    assert len(meta["manifest"]["trial_seeds"]) == 2


def test_population_trajectory_lies_on_cycloid():
    res = run_experiment(ExperimentConfig("trajectory", d=5, trials=3, seed=2, iters=6))
    assert res.passed and res.rows
    assert max(r["distance"] for r in res.rows) <= 1e-10


def test_json_output_validates_against_published_schema(tmp_path):
    out = tmp_path / "dev.json"
    assert main(["deviation", "--eta-grid", "10,100,1000,10000", "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, json.loads(RESULT_SCHEMA_STRING))
    validate_document(doc)
    assert doc["summary"]["exponent"] == pytest.approx(-2.0, abs=0.5)


def test_json_to_stdout(capsys):
    assert main(["fixed_point", "--eta-grid", "1", "--nodes", "64", "--format", "json"]) == 0
    text = capsys.readouterr().out
    doc = json.loads(text[: text.rindex("}") + 1])
    validate_document(doc)


def test_schema_rejects_missing_manifest():
    doc = run_experiment(ExperimentConfig("deviation", eta_grid=[10, 100, 1000])).document()
    del doc["manifest"]
    with pytest.raises(jsonschema.ValidationError):
        validate_document(doc)


def finite_trajectory(**kw):
    return ExperimentConfig("trajectory", d=3, n=500, snr=1e4, trials=3, seed=11, iters=5, **kw)


def test_runs_are_deterministic_and_thread_independent(monkeypatch):
    a = run_experiment(finite_trajectory()).rows
    b = run_experiment(finite_trajectory()).rows
    monkeypatch.setenv("MLR_EM_THREADS", "1")
    c = run_experiment(finite_trajectory()).rows
    assert a == b == c


def test_bad_thread_cap(monkeypatch):
    monkeypatch.setenv("MLR_EM_THREADS", "many")
    with pytest.raises(ValidationError):
        run_experiment(finite_trajectory())


def test_manifest_reproduces_rows_bit_exactly(tmp_path):
    first = run_experiment(finite_trajectory())
    doc = json.loads(json.dumps(first.document()))
    again = run_experiment(config_from_manifest(doc["manifest"]))
    assert again.document()["rows"] == doc["rows"]
    assert again.manifest.trial_seeds == first.manifest.trial_seeds


def test_manifest_round_trip_with_infinite_snr():
    cfg = ExperimentConfig("quad_convergence", d=4, eta_grid=[math.inf, 1e5], trials=2)
    doc = json.loads(json.dumps(run_experiment(cfg).document()))
    back = config_from_manifest(doc["manifest"])
    assert back == cfg


def test_zero_start_angle_is_flagged():
    res = run_experiment(ExperimentConfig("quad_convergence", phi0=0.0, snr=1e5, d=5))
    assert res.rows == [] and "flag" in res.summary


def test_population_quadratic_slope():
    res = run_experiment(ExperimentConfig("quad_convergence", d=3))
    assert res.passed
    assert res.summary["slopes"]["inf"]["slope"] == pytest.approx(2.0, abs=0.05)


def test_population_mixing_slope_is_exact():
    res = run_experiment(ExperimentConfig("mixing_error", d=3, pi1=0.8))
    assert res.passed
    fit = res.summary["fits"]["0.8"]
    assert abs(fit["slope"] - 0.6 / math.pi) <= 1e-12


def test_single_trial_scaling_has_infinite_interval():
    res = run_experiment(ExperimentConfig("scaling", d=10, n_grid=[1000, 10_000, 100_000], trials=1))
    assert res.summary["ci_infinite"] and math.isinf(res.summary["full_slope"]["stderr"])


def test_scaling_grid_must_span_decades():
    with pytest.raises(ValidationError, match="1.5 decades"):
        run_experiment(ExperimentConfig("scaling", d=2, n_grid=[1000, 2000, 4000]))


def test_identities_skip_likelihood_without_noise():
    res = run_experiment(ExperimentConfig("identities"))
    skipped = [c for c in res.checks if c.detail.startswith("skipped")]
    assert res.passed and {c.name for c in skipped} == {"gradient identity", "NLL descent"}
    ends = [r for r in res.rows if r["item"] == "sign_product" and abs(abs(r["param"]) - math.pi / 2) <= 1e-15]
    assert len(ends) == 2 and all(r["residual"] <= 1e-12 for r in ends)


def test_generate_writes_dataset(tmp_path, capsys):
    out = tmp_path / "new" / "data.csv"
    assert main(["generate", "--d", "3", "--n", "40", "--snr", "10", "--seed", "5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x_0,x_1,x_2,y,z" and len(lines) == 41
    assert json.loads(out.with_suffix(".json").read_text())["theta_star"] == [1.0, 0.0, 0.0]
