import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlr_em.errors import ValidationError
from mlr_em.model import (
    MixingImbalance,
    generate_dataset,
    load_dataset,
    make_ground_truth,
    make_rng,
    nu_of_weights,
    save_dataset,
    trial_seed,
    weights_of_nu,
)
from mlr_em.harness import fit_loglog_slope


def test_noiseless_truth_has_infinite_snr():
    gt = make_ground_truth([1.0, 0.0], 0.7, 0.0)
    assert gt.eta == math.inf
    assert gt.tanh_nu_star == pytest.approx(0.4, abs=1e-15)


def test_snr_and_balanced_imbalance():
    star = np.zeros(50)
    star[0] = 1.0
    gt = make_ground_truth(star, 0.5, 1e-6)
    assert gt.eta == pytest.approx(1e6, rel=1e-15)
    assert gt.nu_star == 0.0


def test_single_component_is_infinite_nu():
    gt = make_ground_truth([1.0, 2.0], 1.0, 0.1)
    assert gt.nu_star == math.inf
    assert gt.tanh_nu_star == 1.0


def test_weights_sum_to_one_exactly():
    for p in (0.0, 0.1, 0.3, 0.7, 1 - 1e-6, 1.0):
        gt = make_ground_truth([1.0], p, 0.0)
        assert gt.pi_star[0] + gt.pi_star[1] == 1.0


def test_zero_truth_is_allowed_and_flagged():
    gt = make_ground_truth([0.0, 0.0], 0.5, 1.0)
    assert gt.is_degenerate
    assert gt.eta == 0.0


@pytest.mark.parametrize(
    "args",
    [([np.nan, 0.0], 0.5, 0.0), ([1.0], 1.5, 0.0), ([1.0], -0.1, 0.0), ([1.0], 0.5, -1.0), ([1.0], 0.5, math.inf)],
)
def test_invalid_truth_rejected(args):
    with pytest.raises(ValidationError):
        make_ground_truth(*args)


def test_weights_of_nu_examples():
    assert weights_of_nu(0.0) == (0.5, 0.5)
    assert nu_of_weights((0.8, 0.2)).tanh_nu == pytest.approx(0.6, abs=1e-15)
    assert nu_of_weights((1.0, 0.0)).nu == math.inf
    assert nu_of_weights((0.0, 1.0)).nu == -math.inf
    assert weights_of_nu(math.inf) == (1.0, 0.0)


def test_nu_of_weights_rejects_bad_pairs():
    with pytest.raises(ValidationError):
        nu_of_weights((1.2, -0.2))
    with pytest.raises(ValidationError):
        nu_of_weights((0.5, 0.6))


def test_imbalance_encoding_is_unambiguous():
    with pytest.raises(ValidationError):
        MixingImbalance(5.0, 1.0)
    with pytest.raises(ValidationError):
        MixingImbalance(math.inf, 0.9)
    big = MixingImbalance.from_nu(40.0)
    assert math.isfinite(big.nu) and big.tanh_nu < 1.0


@given(st.floats(min_value=-1 + 1e-9, max_value=1 - 1e-9))
def test_weight_round_trip(t):
    imb = MixingImbalance.from_tanh(t)
    back = nu_of_weights(weights_of_nu(imb))
    assert abs(back.tanh_nu - t) <= 1e-12
    assert abs(math.tanh(back.nu) - t) <= 1e-12


def test_empty_dataset():
    ds = generate_dataset(make_ground_truth([1.0, 0.0], 0.5, 0.1), 0, 1)
    assert ds.n == 0 and ds.d == 2


def test_noiseless_responses_follow_labels_exactly():
    gt = make_ground_truth([0.3, -1.2, 2.0], 0.6, 0.0)
    ds = generate_dataset(gt, 1000, 5)
    sign = np.where(ds.z == 1, 1.0, -1.0)
    assert np.array_equal(ds.y, sign * (ds.x @ gt.theta_star))


def test_response_second_moment():
    gt = make_ground_truth([1.0, 0.5], 0.3, 0.7)
    ds = generate_dataset(gt, 1_000_000, 11)
    y2 = ds.y**2
    se = y2.std() / math.sqrt(ds.n)
    assert abs(y2.mean() - (gt.norm**2 + gt.sigma**2)) <= 3 * se


def test_same_seed_is_bit_exact():
    gt = make_ground_truth([1.0, -1.0, 0.5], 0.7, 0.2)
    a, b = generate_dataset(gt, 300, 42), generate_dataset(gt, 300, 42)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)
    c = generate_dataset(gt, 300, 43)
    assert not np.array_equal(a.x, c.x)


def test_dataset_is_read_only():
    ds = generate_dataset(make_ground_truth([1.0], 0.5, 0.1), 10, 0)
    with pytest.raises(ValueError):
        ds.x[0, 0] = 1.0
    assert ds.without_labels().z is None


def test_label_frequency_error_shrinks_at_root_n():
    gt = make_ground_truth([1.0], 0.7, 0.0)
    pts = []
    for n in (1000, 10_000, 100_000):
        errs = []
        for i in range(40):
            z = generate_dataset(gt, n, trial_seed(3, i)).z
            errs.append(2 * abs(np.mean(z == 1) - 0.7))
        pts.append((n, float(np.median(errs))))
    slope, _, _ = fit_loglog_slope(pts)
    assert abs(slope + 0.5) <= 0.15


def test_trial_seeds_are_distinct_and_stable():
    seeds = [trial_seed(7, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert seeds == [trial_seed(7, i) for i in range(100)]
    with pytest.raises(ValidationError):
        make_rng(-1)


def test_csv_round_trip(tmp_path):
    gt = make_ground_truth([1.0, -2.0], 0.6, 0.3)
    ds = generate_dataset(gt, 50, 9)
    path, side = save_dataset(ds, gt, tmp_path / "data.csv")
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    assert raw.splitlines()[0] == b"x_0,x_1,y,z"
    back, manifest = load_dataset(path)
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y) and np.array_equal(back.z, ds.z)
    assert manifest == {"d": 2, "n": 50, "seed": 9, "sigma": 0.3, "pi1": 0.6, "theta_star": [1.0, -2.0]}


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**64 - 1), st.integers(min_value=1, max_value=4))
def test_generation_is_deterministic_for_any_seed(seed, d):
    gt = make_ground_truth(np.ones(d), 0.4, 0.5)
    a, b = generate_dataset(gt, 20, seed), generate_dataset(gt, 20, seed)
    assert np.array_equal(a.y, b.y)
