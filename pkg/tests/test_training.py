import numpy as np
import numpy.testing as npt
import pytest

from kwgen.corpus import ParallelPair
from kwgen.model import ModelConfig, init_params, zero_params
from kwgen.training import TrainHyper, loss_and_grads, mean_abs_logz, train

TINY = ModelConfig(vocab_size=10, embed_dim=4, hidden_dim=8)
PAIRS = [
    ParallelPair((3, 4), (5, 6)),
    ParallelPair((7, 8), (9, 3)),
    ParallelPair((4, 5, 6), (7,)),
    ParallelPair((9,), (8, 7, 6)),
]


def test_hyper_validation():
    with pytest.raises(ValueError):
        TrainHyper(learning_rate=0)
    with pytest.raises(ValueError):
        TrainHyper(beta=-0.5)
    assert TrainHyper().learning_rate == 5e-4
    assert TrainHyper().batch_size == 128


def test_loss_rejects_empty_batch():
    with pytest.raises(ValueError):
        loss_and_grads(init_params(TINY, 0), [], 0.1)


def test_regularizer_vanishes_at_unit_partition():
    # zero weights with out.b = -log V make every partition function exactly 1
    params = zero_params(TINY)
    params.tensors["out.b"][:] = -np.log(10)
    l0, _ = loss_and_grads(params, PAIRS, 0.0)
    l1, _ = loss_and_grads(params, PAIRS, 0.7)
    assert l0 == pytest.approx(l1, rel=1e-12)
    assert mean_abs_logz(params, PAIRS) == pytest.approx(0.0, abs=1e-12)


def test_grad_shapes_match_params():
    params = init_params(TINY, 0)
    _, grads = loss_and_grads(params, PAIRS, 0.1)
    assert set(grads) == set(params.tensors)
    for name in grads:
        assert grads[name].shape == params.tensors[name].shape


def test_zero_epochs_returns_init():
    hyper = TrainHyper(epochs=0, seed=4)
    params, metrics = train(PAIRS, TINY, hyper)
    init = init_params(TINY, 4)
    assert metrics == []
    for name in params.tensors:
        npt.assert_array_equal(params.tensors[name], init.tensors[name])


def test_train_deterministic():
    hyper = TrainHyper(epochs=2, batch_size=2, learning_rate=1e-3, seed=11)
    p1, m1 = train(PAIRS, TINY, hyper)
    p2, m2 = train(PAIRS, TINY, hyper)
    assert m1 == m2
    for name in p1.tensors:
        npt.assert_array_equal(p1.tensors[name], p2.tensors[name])


def test_train_rejects_empty_corpus():
    with pytest.raises(ValueError):
        train([], TINY, TrainHyper(epochs=1))


def test_loss_decreases(small_dataset):
    corpus = small_dataset["corpus"][:200]
    cfg = ModelConfig(vocab_size=small_dataset["vocab"].size, embed_dim=16, hidden_dim=24)
    hyper = TrainHyper(epochs=3, batch_size=16, learning_rate=3e-3, beta=0.1, seed=0)
    _, metrics = train(corpus, cfg, hyper)
    assert metrics[-1]["loss"] < metrics[0]["loss"]


def test_self_norm_pushes_logz_down(small_dataset):
    corpus = small_dataset["corpus"][:200]
    cfg = ModelConfig(vocab_size=small_dataset["vocab"].size, embed_dim=16, hidden_dim=24)
    init_logz = mean_abs_logz(init_params(cfg, 0), corpus[:20])
    hyper = TrainHyper(epochs=3, batch_size=16, learning_rate=3e-3, beta=0.1, seed=0)
    _, metrics = train(corpus, cfg, hyper)
    assert metrics[-1]["mean_abs_logZ"] < init_logz


def test_params_stay_finite():
    hyper = TrainHyper(epochs=3, batch_size=2, learning_rate=5e-3, seed=1)
    params, _ = train(PAIRS, TINY, hyper)
    assert params.all_finite()


def test_metrics_schema():
    hyper = TrainHyper(epochs=2, batch_size=2, seed=0)
    _, metrics = train(PAIRS, TINY, hyper)
    assert [m["epoch"] for m in metrics] == [0, 1]
    for m in metrics:
        assert set(m) == {"epoch", "loss", "mean_abs_logZ"}
        assert np.isfinite(m["loss"])
