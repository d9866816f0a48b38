import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkflab.datasets import HEADER, generate, generate_datasets, load_dataset, save_dataset
from rkflab.metrics import armse, rmse_position, rmse_series
from rkflab.noise import NoiseSpec
from rkflab.statespace import cv_initial_belief, cv_model

MODEL, INIT = cv_model(), cv_initial_belief()
NOISE = NoiseSpec.sgas(10 * np.eye(2), 0.8)


def test_roundtrip_preserves_bits(tmp_path):
    ds = generate(MODEL, NOISE, INIT, 7, 12, 5, "cv")
    path = tmp_path / "cv.rkflab"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.states.tobytes() == ds.states.tobytes()
    assert back.observations.tobytes() == ds.observations.tobytes()
    assert back.metadata() == ds.metadata()
    assert back.noise.describe() == ds.noise.describe()


def test_file_layout(tmp_path):
    ds = generate(MODEL, NOISE, INIT, 3, 4, 0, "train")
    path = tmp_path / "d"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    assert lines[0] == HEADER
    meta = json.loads(lines[1])
    assert (meta["N"], meta["T"], meta["n"], meta["m"], meta["seed"]) == (3, 4, 4, 2, 0)
    assert len(lines) == 2 + 3


def test_same_seed_same_bytes(tmp_path):
    for i in range(2):
        save_dataset(generate(MODEL, NOISE, INIT, 5, 6, 42, "test"), tmp_path / f"{i}")
    assert (tmp_path / "0").read_bytes() == (tmp_path / "1").read_bytes()


def test_splits_use_disjoint_streams():
    data = generate_datasets(MODEL, NOISE, (4, 4, 4), 6, 1, INIT)
    obs = [d.observations for d in data.values()]
    assert not np.array_equal(obs[0], obs[1]) and not np.array_equal(obs[1], obs[2])
    # a trajectory does not depend on how many others are generated
    more = generate(MODEL, NOISE, INIT, 9, 6, 1, "train")
    np.testing.assert_array_equal(more.observations[:4], obs[0])


def test_bad_header(tmp_path):
    path = tmp_path / "x"
    path.write_text("# something else\n{}\n")
    with pytest.raises(ValueError):
        load_dataset(path)


def test_rmse_examples():
    truth = np.zeros((1, 1, 4))
    assert rmse_position(np.array([[[3.0, 4.0, 9.0, 9.0]]]), truth, 0) == 5.0
    est = np.array([[[1.0, 0, 0, 0]], [[0, 1.0, 0, 0]]])
    assert rmse_position(est, np.zeros((2, 1, 4)), 0) == 1.0
    assert rmse_position(truth, truth, 0) == 0.0


def test_armse_is_mean_of_series():
    est = np.zeros((1, 2, 4))
    est[0, 0, 0], est[0, 1, 0] = 2.0, 4.0
    assert armse(est, np.zeros((1, 2, 4))) == 3.0


def test_metric_shape_mismatch():
    with pytest.raises(ValueError):
        armse(np.zeros((2, 3, 4)), np.zeros((2, 4, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_armse_permutation_invariant(N, T, seed):
    rng = np.random.default_rng(seed)
    est, truth = rng.normal(size=(N, T, 4)), rng.normal(size=(N, T, 4))
    perm = rng.permutation(N)
    assert armse(est[perm], truth[perm]) == pytest.approx(armse(est, truth), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_adding_worse_pair_never_lowers_rmse(N, seed):
    rng = np.random.default_rng(seed)
    est, truth = rng.normal(size=(N, 5, 4)), rng.normal(size=(N, 5, 4))
    before = rmse_series(est, truth)
    extra = truth[:1].copy()
    extra[..., :2] += (before + 1.0)[None, :, None]
    after = rmse_series(np.concatenate([est, extra]), np.concatenate([truth, truth[:1]]))
    assert np.all(after >= before)
