import math

import numpy as np
import pytest
import torch

from geoseg.network import ModelConfig, build_model
from geoseg.training import (CONSTANT, ONE_CYCLE, TRIANGULAR, LossConfig, NonFiniteLossError, SchedulePolicy,
                             TileSet, TrainPolicy, bce_loss, combo_loss, dice_loss, prepare_images, schedule_lr,
                             schedule_momentum, train, write_history_csv)

SLIM = dict(encoder_widths=(8, 8, 16, 16, 32), encoder_blocks_per_stage=(1, 1, 1, 1))


# -- losses ----------------------------------------------------------------------


def test_bce_hand_values():
    assert float(bce_loss([[0.5]], [[1.0]])) == pytest.approx(0.693147, abs=1e-6)
    assert float(bce_loss([[0.25]], [[1.0]])) == pytest.approx(1.386294, abs=1e-6)


def test_bce_perfect_prediction():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert float(bce_loss(g, g)) <= -math.log(1 - 1e-7) + 1e-12


def test_dice_hand_values():
    assert float(dice_loss([[1, 1, 0, 0]], [[1, 0, 1, 0]])) == pytest.approx(0.5, abs=1e-6)
    g = np.eye(4)
    assert float(dice_loss(g, g)) == pytest.approx(0.0, abs=1e-6)
    assert float(dice_loss(g, 1 - g)) == pytest.approx(1.0, abs=1e-6)


def test_combo_hand_values():
    assert float(combo_loss([[0.5]], [[1.0]])) == pytest.approx(0.893147, abs=1e-6)
    p, g = np.random.default_rng(0).random((2, 5, 5)), np.random.default_rng(1).random((2, 5, 5)) > 0.5
    assert float(combo_loss(p, g, LossConfig(alpha=0))) == pytest.approx(float(bce_loss(p, g)), abs=1e-12)
    assert float(combo_loss(g * 1.0, g)) == pytest.approx(0.0, abs=1e-6)


def test_dice_is_mean_over_samples():
    p = np.stack([np.eye(3), np.eye(3)])
    g = np.stack([np.eye(3), 1 - np.eye(3)])
    assert float(dice_loss(p, g)) == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("fn", [bce_loss, dice_loss, combo_loss])
def test_loss_gradients_match_finite_differences(fn):
    rng = np.random.default_rng(2)
    for _ in range(3):
        p0 = rng.uniform(0.05, 0.95, (8, 8))
        g = (rng.random((8, 8)) > 0.5).astype(np.float64)
        p = torch.tensor(p0, requires_grad=True)
        fn(p, g).backward()
        grad = p.grad.numpy()
        h = 1e-6
        num = np.zeros_like(p0)
        for idx in np.ndindex(p0.shape):
            a, b = p0.copy(), p0.copy()
            a[idx] += h
            b[idx] -= h
            num[idx] = (float(fn(a, g)) - float(fn(b, g))) / (2 * h)
        rel = np.abs(grad - num) / np.maximum(np.maximum(np.abs(grad), np.abs(num)), 1e-8)
        assert rel.max() < 1e-4


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(kind="focal")
    with pytest.raises(ValueError):
        LossConfig(alpha=-1)


# -- schedules -------------------------------------------------------------------


def test_triangular_table():
    pol = SchedulePolicy(cycle_length=100)
    assert schedule_lr(pol, 0) == 1e-4
    assert schedule_lr(pol, 50) == 1e-3
    assert schedule_lr(pol, 25) == 5.5e-4
    assert schedule_lr(pol, 100) == 1e-4
    assert schedule_lr(pol, 75) == pytest.approx(5.5e-4, abs=1e-18)


def test_triangular_bounds():
    pol = SchedulePolicy(cycle_length=37)
    lrs = [schedule_lr(pol, s) for s in range(200)]
    assert min(lrs) >= 1e-4 - 1e-18 and max(lrs) <= 1e-3 + 1e-18


def test_one_cycle_shape():
    pol = SchedulePolicy(kind=ONE_CYCLE, cycle_length=100)
    assert schedule_lr(pol, 0) == 1e-4 and schedule_lr(pol, 50) == 1e-3
    assert schedule_lr(pol, 25) == 5.5e-4
    assert schedule_lr(pol, 100) == pytest.approx(1e-5) and schedule_lr(pol, 500) == pytest.approx(1e-5)
    assert schedule_lr(pol, 60) > schedule_lr(pol, 90)


def test_constant_and_momentum():
    assert schedule_lr(SchedulePolicy(kind=CONSTANT), 1234) == 1e-3
    pol = SchedulePolicy(cycle_length=10, momentum_range=(0.95, 0.85))
    assert schedule_momentum(pol, 0) == pytest.approx(0.95)
    assert schedule_momentum(pol, 5) == pytest.approx(0.85)
    assert schedule_momentum(SchedulePolicy(cycle_length=10), 3) is None


def test_schedule_needs_cycle():
    with pytest.raises(ValueError):
        schedule_lr(SchedulePolicy(kind=TRIANGULAR), 0)
    assert SchedulePolicy().with_cycle(40).cycle_length == 40


# -- training loop -----------------------------------------------------------------


def tiny_set(n=4, size=32, seed=0):
    rng = np.random.default_rng(seed)
    imgs = rng.integers(0, 256, (n, 3, size, size)).astype(np.float32)
    masks = np.zeros((n, size, size), dtype=np.float32)
    masks[:, 8:20, 10:24] = 1
    imgs[:, :, 8:20, 10:24] = 230
    return TileSet(prepare_images(imgs), masks)


def tiny_model(seed=0):
    return build_model(ModelConfig(input_size=(32, 32), seed=seed, **SLIM))


def test_frozen_phase_keeps_encoder():
    m = tiny_model()
    before = {k: v.clone() for k, v in m.encoder.state_dict().items()}
    data = tiny_set()
    m, hist = train(m, data, data, TrainPolicy(frozen_epochs=2, unfrozen_epochs=0, batch_size=2, fallback=False),
                    SchedulePolicy(), LossConfig())
    assert all(torch.equal(before[k], v) for k, v in m.encoder.state_dict().items())
    assert [r.phase for r in hist] == ["frozen", "frozen"]


def test_fallback_restores_best_weights_bitwise():
    data = tiny_set()
    losses = iter([1.0, 2.0, 0.5])
    snaps = []

    def on_epoch(rec, model):
        snaps.append({k: v.clone() for k, v in model.state_dict().items()})

    m, hist = train(tiny_model(), data, data,
                    TrainPolicy(frozen_epochs=0, unfrozen_epochs=3, batch_size=2),
                    SchedulePolicy(), LossConfig(), evaluate_fn=lambda model: (next(losses), 0.0),
                    on_epoch=on_epoch)
    assert [r.fellback for r in hist] == [False, True, False]
    assert all(torch.equal(snaps[0][k], snaps[1][k]) for k in snaps[0])
    assert any(not torch.equal(snaps[1][k], snaps[2][k]) for k in snaps[0])
    # the returned model is the best one (epoch 3)
    assert all(torch.equal(snaps[2][k], v) for k, v in m.state_dict().items())


def test_training_deterministic(tmp_path):
    data = tiny_set()
    pol = TrainPolicy(frozen_epochs=1, unfrozen_epochs=1, batch_size=2, seed=3)
    _, h1 = train(tiny_model(3), data, data, pol, SchedulePolicy(), LossConfig())
    _, h2 = train(tiny_model(3), data, data, pol, SchedulePolicy(), LossConfig())
    write_history_csv(h1, tmp_path / "a.csv")
    write_history_csv(h2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_lr_per_epoch_cycle_recorded():
    data = tiny_set(n=8)
    _, hist = train(tiny_model(), data, data, TrainPolicy(frozen_epochs=0, unfrozen_epochs=1, batch_size=2),
                    SchedulePolicy(), LossConfig())
    # four steps per epoch, one cycle per epoch: 1e-4, 5.5e-4, 1e-3, 5.5e-4
    assert hist[0].lr_first == 1e-4 and hist[0].lr_last == pytest.approx(5.5e-4)


def test_non_finite_loss_raises():
    data = tiny_set()
    data.images[:] = np.nan
    with pytest.raises(NonFiniteLossError) as exc:
        train(tiny_model(), data, data, TrainPolicy(frozen_epochs=0, unfrozen_epochs=1, batch_size=2),
              SchedulePolicy(), LossConfig())
    assert exc.value.epoch == 1


def test_prepare_images_normalization():
    x = prepare_images(np.full((1, 3, 2, 2), 255.0))
    np.testing.assert_allclose(x[0, :, 0, 0], [(1 - 0.485) / 0.229, (1 - 0.456) / 0.224, (1 - 0.406) / 0.225],
                               rtol=1e-6)
