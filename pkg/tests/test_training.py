import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rkflab import autodiff as ad
from rkflab.datasets import generate_datasets
from rkflab.filters import kf_filter
from rkflab.nn import FcnnParams
from rkflab.noise import NoiseSpec
from rkflab.rkfnet import RKFNetParams, init_params, rkfnet_forward
from rkflab.statespace import cv_initial_belief, cv_model
from rkflab.training import (AllRunsFailed, TrainingConfig, draw_selector, gradient_check, loss,
                             loss_and_grads, loss_from_errors, penalty_terms, prediction_errors,
                             select_best, select_best_index, st_nll, train, train_runs,
                             uss_probability, write_training_log)

RBAR = 10 * np.eye(2)
MODEL, INIT = cv_model(), cv_initial_belief()


def small_data(noise=None, sizes=(20, 10, 10), T=8, seed=0):
    noise = noise or NoiseSpec.gm(RBAR, 100.0)
    return generate_datasets(MODEL, noise, sizes, T, seed, INIT)


def rough_params(seed=0):
    p = init_params(2, np.random.default_rng(seed))
    for b in p.fcnn.biases:
        b[:] = np.random.default_rng(seed + 1).normal(0, 0.1, b.shape)
    return p


def test_st_nll_cauchy_at_zero():
    assert st_nll(0.0, 1.0, 1.0) == pytest.approx(math.log(math.pi), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(0.05, 100), st.floats(0.05, 20))
def test_st_nll_symmetric_and_matches_scipy(x, v, sigma):
    assert st_nll(x, v, sigma) == st_nll(-x, v, sigma)
    assert st_nll(x, v, sigma) == pytest.approx(-stats.t.logpdf(x, v, scale=sigma), rel=1e-9, abs=1e-9)


def test_st_nll_gaussian_limit():
    assert st_nll(1.5, 1e6, 1.0) == pytest.approx(0.5 * math.log(2 * math.pi) + 1.125, abs=1e-4)


@pytest.mark.parametrize("v,sigma", [(0.0, 1.0), (1.0, -1.0)])
def test_st_nll_domain(v, sigma):
    with pytest.raises(ad.DomainError):
        st_nll(1.0, v, sigma)


def test_det_penalty_vanishes_at_unit_determinant():
    p = init_params(2, np.random.default_rng(0))
    p.R_s = np.array([[2.0, 0.0], [0.0, 0.5]]) / 300.0
    det_pen, _ = penalty_terms(p, TrainingConfig())
    assert det_pen == 0.0


def test_zero_parameters_and_zero_innovations():
    zero = FcnnParams([np.zeros((5, 32)), np.zeros((32, 1))], [np.zeros(32), np.zeros(1)])
    p = RKFNetParams(zero, np.zeros((2, 2)), np.array(0.0), np.array(0.0))
    cfg = TrainingConfig()
    E = np.zeros((3, 4, 2))
    # v = sigma = 1 so the data term is log(pi); det(R_hat) = 0 costs gamma1
    assert loss_from_errors(E, p, cfg) == pytest.approx(math.log(math.pi) + cfg.gamma1, abs=1e-12)


def test_l2_penalty_gradient():
    p = rough_params()
    cfg = TrainingConfig(gamma2=0.3)
    tape = ad.Tape()
    live, leaves = p.on_tape(tape)
    adj = tape.backward(penalty_terms(live, cfg)[1])
    for name, arr in p.to_dict().items():
        np.testing.assert_allclose(adj[leaves[name]], 2 * 0.3 * arr, rtol=1e-14)


def test_prediction_errors_use_own_posteriors():
    data = small_data()["train"]
    p = rough_params()
    outs = rkfnet_forward(data.observations, INIT, p, MODEL)
    E = prediction_errors(outs, data.observations, MODEL)
    assert E.shape == (20, 7, 2)
    means = np.stack([o.mean for o in outs], axis=1)
    np.testing.assert_allclose(E, data.observations[:, 1:] - means[:, :-1] @ (MODEL.H @ MODEL.F).T)


def test_uss_schedule():
    cfg = TrainingConfig()
    assert uss_probability(0, cfg) == 1.0
    assert uss_probability(600, cfg) == 0.0
    assert uss_probability(300, cfg) == pytest.approx(0.5)
    assert uss_probability(10**6, TrainingConfig(p_min=0.2)) == 0.2


def test_selector_extremes_and_fraction():
    rng = np.random.default_rng(0)
    assert draw_selector((3, 50), 1.0, rng).all()
    assert not draw_selector((3, 50), 0.0, rng).any()
    frac = draw_selector((100_000,), 0.5, rng).mean()
    assert 0.49 <= frac <= 0.51
    with pytest.raises(ValueError):
        draw_selector((2,), 1.5, rng)


@pytest.mark.parametrize("bad", [dict(p_min=0.5, p_max=0.2), dict(dp=-1.0), dict(gamma1=-1.0),
                                 dict(loss="huber"), dict(runs=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainingConfig(**bad)


def test_loss_invariant_to_batch_order():
    data = small_data()["train"]
    p = rough_params()
    cfg = TrainingConfig()
    Z = data.observations
    perm = np.random.default_rng(1).permutation(len(Z))
    a = loss(rkfnet_forward(Z, INIT, p, MODEL), Z, p, cfg, MODEL)
    b = loss(rkfnet_forward(Z[perm], INIT, p, MODEL), Z[perm], p, cfg, MODEL)
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("loss_name", ["st", "l1", "l2"])
def test_batched_gradient_matches_finite_differences(loss_name):
    data = small_data(sizes=(2, 1, 1), T=5, seed=3)["train"]
    ref = kf_filter(MODEL, RBAR, data.observations, INIT)
    sel = np.random.default_rng(4).random((2, 5)) < 0.5
    # under l1/l2 the loss parameters only enter the quadratic penalty, where a
    # wide step has no truncation error and keeps round-off below 1e-8
    steps = {} if loss_name == "st" else {"v_prime": 1e-5, "sigma_prime": 1e-5}
    errors = gradient_check(rough_params(5), data.observations, INIT, MODEL,
                            TrainingConfig(loss=loss_name), ref, sel, steps)
    assert set(errors) == {"fcnn", "R_s", "v_prime", "sigma_prime"}
    for rel, absolute in errors.values():
        assert rel < 1e-4 and absolute < 1e-8


def test_gradient_under_heavy_tails():
    data = small_data(NoiseSpec.sgas(RBAR, 0.5), sizes=(2, 1, 1), T=5, seed=6)["train"]
    errors = gradient_check(rough_params(7), data.observations, INIT, MODEL, TrainingConfig())
    for rel, absolute in errors.values():
        assert rel < 1e-4 and absolute < 1e-8


def test_full_reference_still_trains_current_step():
    data = small_data(sizes=(4, 1, 1), T=6)["train"]
    ref = kf_filter(MODEL, RBAR, data.observations, INIT)
    _, grads = loss_and_grads(rough_params(), data.observations, INIT, MODEL, TrainingConfig(),
                              ref, np.ones((4, 6), dtype=bool))
    assert np.abs(grads["fcnn.W0"]).max() > 0 and np.abs(grads["R_s"]).max() > 0


def _tiny_cfg(**kw):
    base = dict(iterations=6, batch_size=8, runs=2, cv_every=3, seed=11)
    base.update(kw)
    return TrainingConfig(**base)


def test_zero_iterations_returns_initialisation():
    ds = small_data()
    ref = kf_filter(MODEL, RBAR, ds["train"].observations, INIT)
    cfg = _tiny_cfg(iterations=0)
    params, hist = train(MODEL, INIT, ds["train"], ds["cv"], ref, cfg)
    start = init_params(2, np.random.default_rng(np.random.SeedSequence(11, spawn_key=(0,))))
    for k, v in start.to_dict().items():
        np.testing.assert_array_equal(params.to_dict()[k], v)
    assert hist.loss == [] and len(hist.cv) == 1


def test_training_is_deterministic(tmp_path):
    ds = small_data()
    ref = kf_filter(MODEL, RBAR, ds["train"].observations, INIT)
    paths = []
    for i in range(2):
        _, hist = train(MODEL, INIT, ds["train"], ds["cv"], ref, _tiny_cfg())
        path = tmp_path / f"log{i}.tsv"
        write_training_log(hist, path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "# iteration\tp_t\tloss\trate"
    assert len(lines) == 1 + 6 + 3  # cv at 0, 3 and the end


def test_history_lengths_and_schedule():
    ds = small_data()
    ref = kf_filter(MODEL, RBAR, ds["train"].observations, INIT)
    _, hist = train(MODEL, INIT, ds["train"], ds["cv"], ref, _tiny_cfg(dp=0.25))
    assert len(hist.loss) == len(hist.p) == len(hist.rate) == 6
    assert hist.p == [1.0, 0.75, 0.5, 0.25, 0.0, 0.0]
    assert [t for t, _ in hist.cv] == [0, 3, 6]
    assert all(np.isfinite(hist.loss))


def test_train_runs_selects_lowest_cv():
    ds = small_data()
    ref = kf_filter(MODEL, RBAR, ds["train"].observations, INIT)
    params, runs, best = train_runs(MODEL, INIT, ds["train"], ds["cv"], ref, _tiny_cfg(runs=3))
    finals = [h.final_cv for _, h in runs]
    assert best == int(np.argmin(finals))
    assert runs[best][1].selected_run == best


def test_select_best_index():
    assert select_best_index([5.1, 4.2, 6.0]) == 1
    assert select_best_index([3.0]) == 0
    assert select_best_index([2.0, 1.0, 1.0]) == 1
    assert select_best_index([np.nan, np.inf, 7.0]) == 2
    with pytest.raises(AllRunsFailed):
        select_best_index([np.nan, np.inf])


def test_select_best_all_failed():
    with pytest.raises(AllRunsFailed):
        select_best([None, None], None, MODEL, INIT)


def test_batch_size_must_fit():
    ds = small_data()
    ref = kf_filter(MODEL, RBAR, ds["train"].observations, INIT)
    with pytest.raises(ValueError):
        train(MODEL, INIT, ds["train"], ds["cv"], ref, _tiny_cfg(batch_size=21))
