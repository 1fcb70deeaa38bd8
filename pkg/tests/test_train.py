import math

import numpy as np
import pytest

from chsnet.data import stack
from chsnet.errors import ConfigurationError, DivergenceError
from chsnet.losses import cascade_loss
from chsnet.metrics import report_from_counts
from chsnet.nn import Context
from chsnet.optim import SGD, Adam, build_optimizer
from chsnet.tensor import Tape, Tensor
from chsnet.train import (
    EvalResult,
    HistoryRecord,
    TrainConfig,
    cross_validate,
    evaluate,
    kfold_indices,
    parse_history_line,
    predict,
    read_history,
    snapshot,
    train,
)

from helpers import tiny_model, tiny_samples


def params_of(model):
    return [p.data.copy() for p in model.parameters()]


def test_zero_learning_rate_leaves_parameters_bit_identical():
    model = tiny_model()
    before = params_of(model)
    train(model, tiny_samples(4), tiny_samples(2, 1), TrainConfig(epochs=1, batch_size=2, learning_rate=0.0))
    assert all(np.array_equal(a, b) for a, b in zip(before, params_of(model)))


@pytest.mark.parametrize("lr", [1e-2, 1e-3, 1e-4])
def test_single_gradient_step_decreases_loss(lr):
    model = tiny_model(base_filters=8)
    X, L, I = stack(tiny_samples(1))
    ctx = Context(training=True)

    def loss():
        return cascade_loss(model(Tensor(X), ctx), L, I)

    opt = SGD(model.parameters(), lr)
    with Tape() as tape:
        before = loss()
    tape.backward(before, opt.params)
    opt.step()
    assert loss().item() < before.item()


def frozen_evaluator(curve):
    it = iter(curve)

    def ev(model):
        return EvalResult(next(it), report_from_counts(1, 1, 0, 0))

    return ev


def test_early_stopping_after_exactly_patience_stale_epochs():
    cfg = TrainConfig(epochs=20, batch_size=4, early_stop_patience=3)
    curve = [1.0, 0.8, 0.9, 0.8, 0.85] + [0.5] * 20  # 0.8 again is not an improvement
    res = train(tiny_model(), tiny_samples(4), [], cfg, evaluator=frozen_evaluator(curve))
    assert res.stopped_early and res.best_epoch == 2
    assert res.val_losses() == [1.0, 0.8, 0.9, 0.8, 0.85]


def test_best_weights_are_restored():
    model = tiny_model()
    states = []

    def ev(m):
        states.append(snapshot(m))
        return EvalResult([0.5, 0.1, 0.7][len(states) - 1], report_from_counts(1, 1, 0, 0))

    train(model, tiny_samples(4), [], TrainConfig(epochs=3, batch_size=4, learning_rate=1e-2), evaluator=ev)
    assert all(np.array_equal(a, b) for a, b in zip(snapshot(model), states[1]))


def test_nan_validation_loss_aborts():
    with pytest.raises(DivergenceError):
        train(tiny_model(), tiny_samples(2), [], TrainConfig(epochs=2, batch_size=2),
              evaluator=frozen_evaluator([math.nan]))


def test_nan_input_aborts_with_divergence():
    samples = tiny_samples(2)
    samples[0].image[0, 0, 0] = np.nan
    for check in (True, False):
        with pytest.raises(DivergenceError):
            train(tiny_model(), samples, samples, TrainConfig(epochs=1, batch_size=2, check_finite=check))


def test_training_is_deterministic_and_writes_history(tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=2, dropout_rate=0.2, seed=5)
    runs = []
    for name in ("a", "b"):
        model = tiny_model()
        train(model, tiny_samples(4), tiny_samples(2, 1), cfg, history_path=tmp_path / name)
        runs.append(snapshot(model))
    assert all(np.array_equal(a, b) for a, b in zip(*runs))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    records = read_history(tmp_path / "a")
    assert [(r["epoch"], r["split"]) for r in records] == [(1, "train"), (1, "val"), (2, "train"), (2, "val")]
    assert set(records[0]) == {"epoch", "split", "loss", "accuracy", "precision", "specificity", "recall", "dice", "jaccard"}


def test_history_line_round_trip():
    rec = HistoryRecord(3, "val", 0.1 + 0.2, report_from_counts(3, 4, 1, 2))
    parsed = parse_history_line(rec.to_line())
    assert parsed["loss"] == 0.1 + 0.2 and parsed["epoch"] == 3
    assert parsed["dice"] == rec.metrics.dice


def test_direct_model_trains_and_evaluates_without_lung_output():
    model = tiny_model("raiu")
    train(model, tiny_samples(2), tiny_samples(2, 1), TrainConfig(epochs=1, batch_size=2))
    res = evaluate(model, tiny_samples(2, 1))
    assert res.lung is None and 0 <= res.infection.dice <= 1
    lung, inf = predict(model, stack(tiny_samples(3))[0], batch_size=2)
    assert lung is None and inf.shape == (3, 16, 16, 1)


def test_kfold_partition():
    folds = kfold_indices(11, 3, seed=1)
    joined = np.sort(np.concatenate(folds))
    assert np.array_equal(joined, np.arange(11))
    assert sorted(len(f) for f in folds) == [3, 4, 4]
    with pytest.raises(ConfigurationError):
        kfold_indices(3, 5)


def test_cross_validate_returns_one_result_per_fold():
    results = cross_validate(lambda: tiny_model(), tiny_samples(4), TrainConfig(epochs=1, batch_size=2, kfold=2))
    assert [r.fold for r in results] == [0, 1]
    assert all(len(r.result.history) == 2 for r in results)


@pytest.mark.parametrize(
    "kw", [dict(epochs=0), dict(learning_rate=-1.0), dict(loss_reduction="max"), dict(mc_samples=1),
           dict(dropout_rate=1.0), dict(kfold=1), dict(optimizer="rmsprop"), dict(threshold=1.0)],
)
def test_train_config_validation(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


def test_train_config_dict_round_trip_and_empty_split():
    cfg = TrainConfig(epochs=3, kfold=5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        train(tiny_model(), [], tiny_samples(1), cfg)
    with pytest.raises(ConfigurationError):
        evaluate(tiny_model(), [])


def test_optimizers():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, -0.5])
    Adam([p], lr=0.1).step()
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)  # first Adam step moves by lr*sign(g)
    q = Tensor(np.array([1.0]), requires_grad=True)
    opt = build_optimizer("sgd", [q], 0.5)
    q.grad = np.array([np.inf])
    with pytest.raises(DivergenceError):
        opt.step()
    with pytest.raises(ConfigurationError):
        build_optimizer("lbfgs", [q], 0.1)
