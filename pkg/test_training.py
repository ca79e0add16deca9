import numpy as np
import pytest

from ggmotion import network
from ggmotion.autodiff import ParamStore
from ggmotion.errors import NumericalError, UsageError
from ggmotion.file_handler import windows
from ggmotion.models import ModelConfig, SynthConfig, TrainConfig
from ggmotion.synthetic import synth_generate
from ggmotion.topology import chain
from ggmotion.training import (
    AdamState,
    adam_step,
    evaluate,
    lr_at,
    split_windows,
    stack_windows,
    train,
)


@pytest.fixture
def chain_windows(chain5, tiny_cfg):
    seq = synth_generate(SynthConfig(frames=40, seed=3), chain5)
    return windows(seq, tiny_cfg.t_h, tiny_cfg.t_f, stride=2)


def _quick(**overrides):
    settings = dict(epochs=2, batch_size=4, micro_batch=2, lr=1e-3, seed=5)
    settings.update(overrides)
    return TrainConfig(**settings)


def test_adam_zero_gradients_leave_params():
    store = ParamStore()
    store.add("w", np.array([[1.0, -2.0], [0.5, 3.0]]))
    before = store["w"].copy()
    state = adam_step(store, AdamState.zeros_like(store), TrainConfig())
    assert state.step == 1
    assert np.array_equal(store["w"], before)


def test_adam_zero_gradients_leave_model_params_bit_identical(chain5, tiny_cfg):
    store = network.init_params(tiny_cfg, chain5)
    before = store.copy()
    adam_step(store, AdamState.zeros_like(store), TrainConfig())
    changed = [p for p in store if not np.array_equal(store[p], before[p])]
    assert changed == []


def test_adam_first_step_moves_by_lr_times_sign():
    store = ParamStore()
    store.add("w", np.zeros(4))
    store.grads["w"] = np.array([0.5, -2.0, 7.0, -0.01])
    adam_step(store, AdamState.zeros_like(store), TrainConfig(), lr=1e-2)
    np.testing.assert_allclose(store["w"], [-1e-2, 1e-2, -1e-2, 1e-2], rtol=1e-5)


def test_adam_keeps_centroid_columns_normalised(chain5, tiny_cfg):
    store = network.init_params(tiny_cfg, chain5)
    for path in store:
        store.grads[path] = np.ones_like(store[path])
    adam_step(store, AdamState.zeros_like(store), TrainConfig(lr=0.1))
    np.testing.assert_allclose(store["block.1.phi_c"].sum(axis=0), 1.0, atol=1e-12)


def test_learning_rate_schedule():
    cfg = TrainConfig()
    for k in range(5):
        assert lr_at(cfg, k) == 3e-4 * 0.88 ** k
    assert lr_at(TrainConfig(lr_decay=1.0), 30) == 3e-4


def test_split_windows():
    items = [(np.full((1, 3, 2), i), np.zeros((1, 3, 1))) for i in range(100)]
    train_part, val, test = split_windows(items, seed=1)
    assert (len(train_part), len(val), len(test)) == (80, 10, 10)
    ids = sorted(int(w[0][0, 0, 0]) for w in train_part + val + test)
    assert ids == list(range(100))
    again = split_windows(items, seed=1)
    assert [w[0][0, 0, 0] for w in again[1]] == [w[0][0, 0, 0] for w in val]


def test_empty_dataset_is_a_usage_error(chain5, tiny_cfg):
    with pytest.raises(UsageError):
        stack_windows([])
    with pytest.raises(UsageError):
        train(tiny_cfg, _quick(), chain5, [])


def test_window_length_must_match_model(chain5, tiny_cfg):
    seq = synth_generate(SynthConfig(frames=20), chain5)
    with pytest.raises(UsageError):
        train(tiny_cfg, _quick(), chain5, windows(seq, 3, 3))


def test_training_history_and_determinism(chain5, tiny_cfg, chain_windows):
    first = train(tiny_cfg, _quick(), chain5, chain_windows, val_windows=chain_windows[:3])
    second = train(tiny_cfg, _quick(), chain5, chain_windows, val_windows=chain_windows[:3])
    assert len(first.history) == 2
    assert set(first.history[0]) == {"epoch", "loss_pos", "loss_aux", "val_mpjpe", "lr"}
    assert first.history[1]["lr"] == lr_at(_quick(), 1)
    assert first.history == second.history
    assert all(np.array_equal(first.params[p], second.params[p]) for p in first.params)
    assert first.steps == 2 * int(np.ceil(len(chain_windows) / 4))


def test_thread_count_does_not_change_results(chain5, tiny_cfg, chain_windows):
    single = train(tiny_cfg, _quick(epochs=1), chain5, chain_windows)
    threaded = train(tiny_cfg, _quick(epochs=1, threads=2), chain5, chain_windows)
    assert single.history == threaded.history
    assert all(np.array_equal(single.params[p], threaded.params[p]) for p in single.params)


def test_max_steps_stops_early(chain5, tiny_cfg, chain_windows):
    result = train(tiny_cfg, _quick(epochs=10, max_steps=3), chain5, chain_windows)
    assert result.steps == 3
    assert len(result.history) == 1


def test_non_finite_loss_aborts(chain5, tiny_cfg, chain_windows):
    past, future = chain_windows[0]
    broken = [(np.full_like(past, np.nan), future)] + chain_windows[1:]
    with pytest.raises(NumericalError) as info:
        train(tiny_cfg, _quick(batch_size=64), chain5, broken)
    assert info.value.step == 0
    assert info.value.exit_code == 3


def test_evaluate_reports_millimetres(chain5, tiny_cfg, chain_windows):
    store = network.init_params(tiny_cfg, chain5)
    report = evaluate(store, tiny_cfg, chain5, chain_windows)
    assert len(report["per_frame"]) == tiny_cfg.t_f
    assert report["mean"] == pytest.approx(np.mean(report["per_frame"]))
    assert report["mean"] > 0


@pytest.mark.slow
def test_overfits_a_single_window(chain5, tiny_cfg, chain_windows):
    window = chain_windows[0]
    cfg = TrainConfig(epochs=500, batch_size=1, micro_batch=1, lr=3e-3, lr_decay=0.995,
                      aux_loss="bone_length", seed=0)
    result = train(tiny_cfg, cfg, chain5, [window])
    initial = result.history[0]["loss_pos"] + result.history[0]["loss_aux"]
    final = result.history[-1]["loss_pos"] + result.history[-1]["loss_aux"]
    assert result.steps == 500
    assert final < 0.01 * initial


@pytest.mark.slow
def test_fits_synthetic_chain_windows():
    topo = chain(10)
    model_cfg = ModelConfig(n_joints=10, t_h=10, t_f=10, channels=16, hidden=32, blocks=2, seed=0)
    seq = synth_generate(SynthConfig(frames=51, seed=0), topo)
    data = windows(seq, 10, 10, stride=1)
    assert len(data) == 32
    cfg = TrainConfig(epochs=500, batch_size=32, micro_batch=32, lr=3e-3, lr_decay=0.995, seed=0)
    untrained = evaluate(network.init_params(model_cfg, topo), model_cfg, topo, data)["mean"]

    short = cfg.model_copy(update={"max_steps": 20})
    assert train(model_cfg, short, topo, data).history == train(model_cfg, short, topo, data).history

    result = train(model_cfg, cfg, topo, data)
    assert result.steps == 500
    assert evaluate(result.params, model_cfg, topo, data)["mean"] <= 0.1 * untrained
