"""Objectives, batch plumbing, the constrained backward pass, and training."""

import logging

import numpy as np
import pytest

from ooklearn.binarize import BinarizerSpec
from ooklearn.channel import (
    KINGBRIGHT_LED,
    LINEAR_LED,
    ChannelSpec,
    make_isi_channel,
)
from ooklearn.codebook import audit, average_power
from ooklearn.config import TrainConfig
from ooklearn.nn import build_model
from ooklearn.training import (
    Batch,
    DualState,
    Trainer,
    constrained_backward,
    cross_entropy_cost,
    dimming_constraint,
    lagrangian,
    make_batch,
    penalty_objective,
    surrogate_objective,
    train,
    transceiver_pass,
)


def test_cross_entropy_perfect_predictions():
    probs = np.eye(3)
    assert cross_entropy_cost(probs, [0, 1, 2]) == 0.0


def test_cross_entropy_uniform_four_messages():
    probs = np.full((6, 4), 0.25)
    got = cross_entropy_cost(probs, [0, 1, 2, 3, 0, 1])
    assert got == pytest.approx(np.log(4.0), abs=1e-15)


def test_cross_entropy_hand_arithmetic_pair():
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    got = cross_entropy_cost(probs, [0, 0])
    assert got == pytest.approx((np.log(2.0) + np.log(4.0)) / 2.0, abs=1e-15)
    assert got == pytest.approx(1.0397, abs=1e-4)


def test_cross_entropy_floors_zero_probabilities(caplog):
    probs = np.array([[0.0, 1.0]])
    with caplog.at_level(logging.WARNING):
        got = cross_entropy_cost(probs, [0])
    assert np.isfinite(got)
    assert any("clamping" in r.message for r in caplog.records)


def test_dimming_constraint_half_on_probabilities():
    delta = 0.37
    u = np.full((4, 8), delta)  # h = 0.5 everywhere
    assert dimming_constraint(u, delta) == pytest.approx(4.0, abs=1e-12)


def test_dimming_constraint_saturated_codewords():
    u = np.full((4, 8), -40.0)
    u[:, :3] = 40.0  # three saturated on-bits per codeword
    assert dimming_constraint(u, 0.0) == pytest.approx(3.0, abs=1e-12)


def test_dimming_constraint_nonlinear_led_matches_polynomial_oracle():
    u = np.full((2, 8), 40.0)  # h = 1 everywhere
    got = dimming_constraint(u, 0.0, KINGBRIGHT_LED)
    psum = sum(KINGBRIGHT_LED.coefficients)  # drive level 1 through the polynomial
    want = psum + 7 * 1.1 * psum
    assert got == pytest.approx(want, abs=1e-9)


def test_lagrangian_equals_cost_at_feasible_point():
    duals = DualState(targets=(2.0, 4.0), lam=np.array([0.3, -0.2]), rho=3e-6)
    assert lagrangian(1.25, [2.0, 4.0], duals) == pytest.approx(1.25, abs=1e-15)


def test_lagrangian_hand_arithmetic():
    duals = DualState(targets=(3.0,), lam=np.array([0.5]), rho=3e-6)
    got = lagrangian(1.0, [5.0], duals)
    assert got == pytest.approx(2.000012, abs=1e-12)


def test_lagrangian_reduces_to_cost_without_duals():
    duals = DualState(targets=(3.0,), lam=np.zeros(1), rho=0.0)
    assert lagrangian(0.7, [9.0], duals) == pytest.approx(0.7)


def test_penalty_objective_quadratic_term():
    got = penalty_objective(1.0, [5.0, 2.0], [3.0, 2.0], 0.5)
    assert got == pytest.approx(1.0 + 0.5 * 4.0)
    assert penalty_objective(1.0, [3.0], [3.0], 10.0) == pytest.approx(1.0)


def test_dual_state_zeros_and_copy():
    duals = DualState.zeros((2.0, 3.0), rho=1e-3)
    assert duals.targets == (2.0, 3.0)
    assert np.array_equal(duals.lam, [0.0, 0.0])
    dup = duals.copy()
    dup.lam[0] = 5.0
    assert duals.lam[0] == 0.0


def test_make_batch_stratifies_message_target_pairs():
    rng = np.random.default_rng(0)
    channel = ChannelSpec()
    targets = (2.0, 3.0, 4.0)
    batch = make_batch(4, 8, targets, 27, 0.1, channel, rng)
    assert len(batch.messages) == 27
    # 27 // 12 = 2 full passes over all pairs, 3 uniform extras
    for msg in range(4):
        for d in targets:
            count = np.sum((batch.messages == msg) & (batch.dims == d))
            assert count >= 2
    assert batch.matrices is None
    assert batch.noise.shape == (27, 8)


def test_make_batch_small_batches_fall_back_to_uniform():
    rng = np.random.default_rng(1)
    batch = make_batch(8, 8, (2.0, 3.0), 5, 0.1, ChannelSpec(), rng)
    assert len(batch.messages) == 5
    assert set(batch.dims) <= {2.0, 3.0}


def test_make_batch_isi_channel_draws_per_sample_matrices():
    rng = np.random.default_rng(2)
    batch = make_batch(2, 4, (2.0,), 6, 0.1, ChannelSpec(kind="isi"), rng)
    assert batch.matrices is not None
    assert batch.matrices.shape == (6, 4, 4)


def _small_setup(seed=0, n=4, m=4, targets=(2.0, 3.0), csi_mode="fixed",
                 batch_norm=True):
    rng = np.random.default_rng(seed)
    model = build_model(n, m, preset="base", csi_mode=csi_mode,
                        batch_norm=batch_norm, rng=rng)
    binarizer = BinarizerSpec.for_targets(targets, n)
    return model, binarizer, rng


def _fixed_batch(rng, m, n, targets, size, noise_variance=0.1, matrices=None):
    messages = rng.integers(0, m, size=size)
    dims = np.asarray(targets)[rng.integers(0, len(targets), size=size)]
    noise = rng.normal(0.0, np.sqrt(noise_variance), size=(size, n))
    return Batch(messages, dims, noise, matrices)


def test_transceiver_pass_mode_contract():
    model, binarizer, rng = _small_setup()
    batch = _fixed_batch(rng, 4, 4, (2.0, 3.0), 10)
    h = np.eye(4)
    with pytest.raises(ValueError):
        transceiver_pass(model, binarizer, LINEAR_LED, h, batch, (2.0, 3.0),
                         mode="round")
    with pytest.raises(ValueError):
        transceiver_pass(model, binarizer, LINEAR_LED, h, batch, (2.0, 3.0),
                         mode="sample", rng=None)
    tape = transceiver_pass(model, binarizer, LINEAR_LED, h, batch,
                            (2.0, 3.0), mode="hard")
    assert set(np.unique(tape.s)) <= {0.0, 1.0}
    tape = transceiver_pass(model, binarizer, LINEAR_LED, h, batch,
                            (2.0, 3.0), mode="mean")
    assert np.array_equal(tape.s, tape.probs)


def test_transceiver_pass_constraint_is_per_target_group_mean():
    model, binarizer, rng = _small_setup()
    batch = _fixed_batch(rng, 4, 4, (2.0, 3.0), 12)
    tape = transceiver_pass(model, binarizer, LINEAR_LED, np.eye(4), batch,
                            (2.0, 3.0), mode="mean")
    for gi, d in enumerate((2.0, 3.0)):
        rows = np.flatnonzero(batch.dims == d)
        want = tape.probs[rows].sum(axis=1).mean()
        assert tape.constraint[gi] == pytest.approx(want, abs=1e-12)


def test_transceiver_pass_empty_group_contributes_zero_residual():
    model, binarizer, rng = _small_setup()
    messages = np.zeros(4, dtype=np.int64)
    dims = np.full(4, 2.0)
    batch = Batch(messages, dims, np.zeros((4, 4)))
    tape = transceiver_pass(model, binarizer, LINEAR_LED, np.eye(4), batch,
                            (2.0, 3.0), mode="mean")
    assert tape.constraint[1] == pytest.approx(3.0)


def test_constrained_backward_requires_exactly_one_objective():
    model, binarizer, rng = _small_setup()
    batch = _fixed_batch(rng, 4, 4, (2.0,), 8)
    tape = transceiver_pass(model, binarizer, LINEAR_LED, np.eye(4), batch,
                            (2.0,), mode="mean")
    with pytest.raises(ValueError):
        constrained_backward(model, tape)
    with pytest.raises(ValueError):
        constrained_backward(model, tape, lam=np.zeros(1), mu=0.5)


def test_multiplier_gradient_equals_constraint_residual():
    model, binarizer, rng = _small_setup(seed=3)
    targets = (2.0, 3.0)
    batch = _fixed_batch(rng, 4, 4, targets, 16)
    tape = transceiver_pass(model, binarizer, LINEAR_LED, np.eye(4), batch,
                            targets, mode="mean")
    _, _, residuals = constrained_backward(model, tape, lam=np.array([0.1, -0.2]),
                                           rho=3e-6)
    direct = np.array([
        dimming_constraint(tape.u[batch.dims == d] - 0.0, binarizer.offset(d))
        for d in targets
    ])
    assert np.allclose(residuals, tape.constraint - np.asarray(targets), atol=0)
    assert np.allclose(tape.constraint, direct, atol=1e-12)


def _relative_gradient_error(model, binarizer, led, h, batch, targets,
                             lam=None, rho=0.0, mu=None, step=1e-5):
    tape = transceiver_pass(model, binarizer, led, h, batch, targets,
                            mode="mean", train=True)
    enc_g, dec_g, _ = constrained_backward(model, tape, lam=lam, rho=rho, mu=mu)
    analytic = enc_g + dec_g
    worst = 0.0
    rng = np.random.default_rng(1234)
    for arr, grad in zip(model.param_arrays(), analytic):
        flat = arr.ravel()
        gflat = grad.ravel()
        # probe a subset of coordinates per array to keep runtime bounded
        probes = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for i in probes:
            keep = flat[i]
            flat[i] = keep + step
            hi = surrogate_objective(model, binarizer, led, h, batch, targets,
                                     lam=lam, rho=rho, mu=mu)
            flat[i] = keep - step
            lo = surrogate_objective(model, binarizer, led, h, batch, targets,
                                     lam=lam, rho=rho, mu=mu)
            flat[i] = keep
            numeric = (hi - lo) / (2 * step)
            # the 1e-5 floor keeps coordinates whose true gradient sits at
            # the finite-difference noise scale from dominating the metric
            denom = max(abs(numeric), abs(gflat[i]), 1e-5)
            worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst


def test_primal_dual_gradients_match_finite_differences():
    model, binarizer, rng = _small_setup(seed=11)
    targets = (2.0, 3.0)
    batch = _fixed_batch(rng, 4, 4, targets, 12)
    err = _relative_gradient_error(model, binarizer, LINEAR_LED, np.eye(4),
                                   batch, targets,
                                   lam=np.array([0.2, -0.1]), rho=3e-6)
    assert err < 1e-4


def test_penalty_gradients_match_finite_differences():
    model, binarizer, rng = _small_setup(seed=12)
    targets = (2.0,)
    batch = _fixed_batch(rng, 4, 4, targets, 10)
    err = _relative_gradient_error(model, binarizer, LINEAR_LED, np.eye(4),
                                   batch, targets, mu=0.5)
    assert err < 1e-4


def test_gradients_through_nonlinear_led_and_isi_channel():
    model, binarizer, rng = _small_setup(seed=13)
    targets = (2.0, 3.0)
    h, _ = make_isi_channel(1.0, 4)
    batch = _fixed_batch(rng, 4, 4, targets, 10)
    err = _relative_gradient_error(model, binarizer, KINGBRIGHT_LED, h,
                                   batch, targets,
                                   lam=np.array([0.05, 0.1]), rho=3e-6)
    assert err < 1e-4


def test_gradients_with_perfect_csi_decoder():
    model, binarizer, rng = _small_setup(seed=14, csi_mode="perfect")
    targets = (2.0,)
    matrices = np.stack([make_isi_channel(p, 4)[0]
                         for p in rng.uniform(0, 3, size=8)])
    batch = _fixed_batch(rng, 4, 4, targets, 8, matrices=matrices)
    err = _relative_gradient_error(model, binarizer, LINEAR_LED, None,
                                   batch, targets,
                                   lam=np.array([0.1]), rho=3e-6)
    assert err < 1e-4


def _tiny_config(**kw):
    base = dict(n=4, k=1, dimming=(2.0,), batch_size=20, train_samples=3_000,
                validation_samples=2_000, validation_cadence=25,
                noise_variance=0.01, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_primal_dual_with_frozen_duals_matches_zero_penalty_run():
    # With the multipliers frozen at zero and no quadratic weight the
    # constrained update must reduce to plain cross-entropy descent.
    pd = Trainer(_tiny_config(dual_learning_rate=0.0, rho=0.0))
    pen = Trainer(_tiny_config(penalty_mu=0.0))
    for _ in range(10):
        pd.step(pd.next_batch())
        pen.step(pen.next_batch())
    assert np.array_equal(pd.duals.lam, np.zeros(1))
    for a, b in zip(pd.model.param_arrays(), pen.model.param_arrays()):
        assert np.array_equal(a, b)


def test_multiplier_ascends_under_positive_residuals():
    # Freeze the primal weights (vanishing learning rate) at a target the
    # initial codebook overshoots, so every batch residual is positive and
    # the multiplier must ratchet upward.
    trainer = Trainer(_tiny_config(dimming=(3.0,), learning_rate=1e-30,
                                   dual_learning_rate=1e-3))
    lam = [0.0]
    positive = 0
    for _ in range(30):
        metrics = trainer.step(trainer.next_batch())
        positive += metrics["residuals"][0] > 0
        lam.append(metrics["lambdas"][0])
    assert positive == 30
    diffs = np.diff(lam)
    assert np.all(diffs >= 0.0)
    assert lam[-1] > 0.01


def test_clamped_duals_stay_nonnegative():
    trainer = Trainer(_tiny_config(clamp_duals=True))
    for _ in range(40):
        metrics = trainer.step(trainer.next_batch())
        assert np.all(metrics["lambdas"] >= 0.0)


def test_trainer_step_mode_guards():
    pd = Trainer(_tiny_config())
    with pytest.raises(ValueError):
        pd.penalty_step(pd.next_batch())
    pen = Trainer(_tiny_config(penalty_mu=0.5))
    with pytest.raises(ValueError):
        pen.primal_dual_step(pen.next_batch())


def test_training_trivial_instance_reaches_separated_codebook():
    result = train(_tiny_config(train_samples=40_000))
    assert result.feasible
    book = result.codebooks()[2.0]
    report = audit(book)
    assert abs(report.average_weight - 2.0) <= 0.05
    assert report.min_distance >= 2
    assert abs(average_power(book) - 2.0) <= 0.05


def test_training_is_bit_reproducible():
    a = train(_tiny_config(train_samples=2_000))
    b = train(_tiny_config(train_samples=2_000))
    for x, y in zip(a.model.param_arrays(), b.model.param_arrays()):
        assert np.array_equal(x, y)
    assert a.report.iterations[-1] == b.report.iterations[-1]
    assert a.report.summary() == b.report.summary()


def test_infeasible_budget_is_flagged():
    # two codewords of length 4 average to a multiple of 0.5, so a 2.25
    # target can never sit inside the 0.05 feasibility band
    result = train(_tiny_config(dimming=(2.25,), train_samples=40,
                                validation_cadence=1))
    assert not result.feasible
    assert result.report.feasible is False
    assert len(result.report.final_residuals) == 1
    assert abs(result.report.final_residuals[0]) > 0.05


def test_train_report_trace_csv(tmp_path):
    result = train(_tiny_config(train_samples=500, validation_cadence=10))
    path = tmp_path / "trace.csv"
    result.report.write_trace(path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header[:3] == ["iteration", "cost", "lagrangian"]
    assert "residual_2" in header
    assert "lambda_2" in header
    assert header[-3:] == ["val_cost", "val_lagrangian", "val_feasible"]
    assert len(lines) == 1 + len(result.report.iterations)
    # validation columns appear on cadence rows only
    row_10 = lines[10].split(",")
    row_11 = lines[11].split(",")
    assert row_10[-1] in {"0", "1"}
    assert row_11[-1] == ""


def test_penalty_trace_has_no_multiplier_columns(tmp_path):
    result = train(_tiny_config(train_samples=200, penalty_mu=0.5,
                                validation_cadence=10))
    path = tmp_path / "trace.csv"
    result.report.write_trace(path)
    assert "lambda" not in path.read_text().splitlines()[0]
    assert result.report.summary()["method"] == "penalty"


def test_validation_feasibility_matches_deterministic_codebooks():
    trainer = Trainer(_tiny_config())
    for _ in range(50):
        trainer.step(trainer.next_batch())
    val = trainer.validate()
    assert np.allclose(val["residuals"], trainer.feasibility_residuals(),
                       atol=1e-12)
    assert val["feasible"] == bool(np.max(np.abs(val["residuals"])) <= 0.05)
