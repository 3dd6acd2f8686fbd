"""Loss terms against loop oracles, the optimizer against a hand-stepped
trajectory, the schedule, and the epoch loop's bookkeeping."""

import math

import numpy as np
import pytest

from phasecoh import autodiff as ad
from phasecoh.coherence import PCI_EPS, pci
from phasecoh.ingest import SensorWindow, Scaler, slice_windows
from phasecoh.model import ModelConfig, init_params
from phasecoh.synth import SynthConfig, generate
from phasecoh.train import (LossBreakdown, LossWeights, TrainConfig,
                            TrainingError, adam_step, batch_loss,
                            composite_loss, cosine_lr, init_adam_state,
                            loss_coh, loss_mag, loss_phase, train_loop)

from conftest import random_window


class TestLossMag:
    def test_perfect_reconstruction(self, rng):
        m = np.abs(rng.normal(size=(4, 9)))
        assert loss_mag(ad.constant(m), m).values == 0.0

    def test_constant_offset(self, rng):
        m = np.abs(rng.normal(size=(4, 9)))
        assert loss_mag(ad.constant(m + 1.0), m).values == pytest.approx(1.0, abs=1e-12)

    def test_matches_loop_oracle(self, rng):
        m_hat = rng.normal(size=(5, 7))
        m = rng.normal(size=(5, 7))
        acc = 0.0
        for i in range(5):
            for j in range(7):
                acc += (m_hat[i, j] - m[i, j]) ** 2
        expect = acc / 35
        assert loss_mag(ad.constant(m_hat), m).values == pytest.approx(expect, abs=1e-12)


class TestLossPhase:
    def test_perfect_reconstruction(self, rng):
        p = rng.uniform(-np.pi, np.pi, size=(4, 9))
        assert loss_phase(ad.constant(p), p).values == 0.0

    def test_antipodal_maximum(self, rng):
        p = rng.uniform(-1.0, 1.0, size=(4, 9))
        assert loss_phase(ad.constant(p + np.pi), p).values == 2.0

    def test_full_turn_is_free(self, rng):
        p = rng.uniform(-np.pi, np.pi, size=(4, 9))
        for k in (1, 2, 5, -3):
            assert loss_phase(ad.constant(p + 2 * np.pi * k), p).values == 0.0

    def test_range_fuzzed(self, rng):
        for _ in range(100):
            a = rng.uniform(-50, 50, size=(3, 8))
            b = rng.uniform(-50, 50, size=(3, 8))
            val = float(loss_phase(ad.constant(a), b).values)
            assert 0.0 <= val <= 2.0

    def test_gradient(self, rng):
        from test_autodiff import fd_check
        target = rng.uniform(-np.pi, np.pi, size=(3, 5))
        fd_check(lambda ts: loss_phase(ts[0], target),
                 [rng.uniform(-np.pi, np.pi, size=(3, 5))], tol=1e-5)


class TestLossCoh:
    def test_same_phases_near_zero(self, rng):
        phase = rng.uniform(-np.pi, np.pi, size=(4, 65))
        adjacency = pci(phase)
        val = float(loss_coh(ad.constant(phase), adjacency).values)
        assert val <= 1e-10

    def test_matches_loop_oracle(self, rng):
        phase_hat = rng.uniform(-np.pi, np.pi, size=(4, 9))
        a = np.ones((4, 4))
        n_ch, n_bins = phase_hat.shape
        acc = 0.0
        for i in range(n_ch):
            for j in range(n_ch):
                sc = sum(math.cos(phase_hat[i, f] - phase_hat[j, f])
                         for f in range(n_bins))
                ss = sum(math.sin(phase_hat[i, f] - phase_hat[j, f])
                         for f in range(n_bins))
                a_hat = math.sqrt(sc * sc + ss * ss + PCI_EPS) / n_bins
                acc += (a_hat - a[i, j]) ** 2
        expect = acc / (n_ch * n_ch)
        got = float(loss_coh(ad.constant(phase_hat), a).values)
        assert got == pytest.approx(expect, abs=1e-12)

    def test_gradient(self, rng):
        from test_autodiff import fd_check
        phase = rng.uniform(-np.pi, np.pi, size=(3, 7))
        target = pci(rng.uniform(-np.pi, np.pi, size=(3, 7)))
        fd_check(lambda ts: loss_coh(ts[0], target), [phase], tol=1e-5)


class TestCompositeLoss:
    def test_single_weight_masks(self, rng, tiny_cfg):
        params = init_params(tiny_cfg)
        window = random_window(rng, 60, 8)
        full, _ = composite_loss(window, tiny_cfg, params, LossWeights(1, 1, 1))
        for weights, component in ((LossWeights(1, 0, 0), "mag"),
                                   (LossWeights(0, 1, 0), "phase"),
                                   (LossWeights(0, 0, 1), "coh")):
            bd, total = composite_loss(window, tiny_cfg, params, weights)
            assert float(total.values) == getattr(bd, component)
            assert getattr(bd, component) == getattr(full, component)

    def test_breakdown_identity(self, rng, tiny_cfg):
        params = init_params(tiny_cfg)
        weights = LossWeights(0.5, 3.0, 1.5)
        bd, _ = composite_loss(random_window(rng, 60, 8), tiny_cfg, params, weights)
        bd.check(weights)

    def test_batch_mean_equals_mean_of_windows(self, rng, tiny_cfg):
        params = init_params(tiny_cfg)
        weights = LossWeights()
        windows = [random_window(rng, 60, 8) for _ in range(4)]
        bd, total = batch_loss(windows, tiny_cfg, params, weights)
        singles = [composite_loss(w, tiny_cfg, params, weights)[0].total
                   for w in windows]
        assert float(total.values) == pytest.approx(np.mean(singles), abs=1e-12)
        assert bd.total == pytest.approx(np.mean(singles), abs=1e-12)

    def test_weight_validation(self):
        with pytest.raises(ValueError, match=">= 0"):
            LossWeights(alpha=-0.1)


def scalar_params(value):
    from phasecoh.model import ModelParams
    return ModelParams({"w": ad.leaf(np.array(float(value)))})


class TestAdam:
    def test_first_step_is_minus_lr(self):
        cfg = TrainConfig(lr=0.1, weight_decay=0.0)
        params = scalar_params(1.0)
        state = init_adam_state(params)
        adam_step(params, {"w": np.array(1.0)}, state, 1, 0.1, cfg)
        assert float(params["w"].values) == pytest.approx(1.0 - 0.1, rel=1e-6)

    def test_zero_grad_zero_wd_is_identity(self):
        cfg = TrainConfig(lr=0.1, weight_decay=0.0)
        params = scalar_params(0.7)
        state = init_adam_state(params)
        adam_step(params, {"w": np.array(0.0)}, state, 1, 0.1, cfg)
        assert float(params["w"].values) == 0.7

    def test_three_step_quadratic_trajectory(self):
        # hand-stepped Adam on f(x) = x^2 / 2 from x0 = 1, lr 0.1
        cfg = TrainConfig(lr=0.1, weight_decay=0.0)
        params = scalar_params(1.0)
        state = init_adam_state(params)
        expected = (0.900000001, 0.8004122297123382, 0.701586274504415)
        for t, target in enumerate(expected, start=1):
            grad = np.array(float(params["w"].values))
            adam_step(params, {"w": grad}, state, t, 0.1, cfg)
            assert float(params["w"].values) == pytest.approx(target, abs=1e-15)

    def test_decoupled_weight_decay(self):
        cfg = TrainConfig(lr=0.1, weight_decay=0.5)
        params = scalar_params(2.0)
        state = init_adam_state(params)
        adam_step(params, {"w": np.array(0.0)}, state, 1, 0.1, cfg)
        # pure decay: 2 * (1 - 0.1 * 0.5); zero grad adds nothing
        assert float(params["w"].values) == pytest.approx(2.0 * 0.95, abs=1e-15)

    def test_non_finite_gradient_aborts(self):
        cfg = TrainConfig()
        params = scalar_params(1.0)
        state = init_adam_state(params)
        with pytest.raises(TrainingError, match="non-finite gradient in 'w'"):
            adam_step(params, {"w": np.array(np.nan)}, state, 1, 0.1, cfg)

    def test_invariant_to_graph_construction_order(self, rng):
        # two differently shaped but value-identical graphs must produce
        # bit-identical gradients and therefore bit-identical updates
        start = rng.normal(size=4)
        coeff = rng.normal(size=4)

        def update(build):
            params = scalar_params(0.0)
            from phasecoh.model import ModelParams
            params = ModelParams({"w": ad.leaf(start.copy())})
            loss = build(params["w"])
            ad.backward(loss)
            state = init_adam_state(params)
            adam_step(params, {"w": params["w"].grad}, state, 1, 0.05,
                      TrainConfig(lr=0.05))
            return params["w"].values.copy()

        c = ad.constant(coeff)
        a = update(lambda w: ad.reduce_sum(ad.add(ad.mul(w, c), ad.mul(w, c))))
        b = update(lambda w: ad.reduce_sum(ad.scale(ad.mul(c, w), 2.0)))
        np.testing.assert_array_equal(a, b)


class TestCosineSchedule:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 80, 5e-4) == 5e-4
        assert cosine_lr(40, 80, 5e-4) == pytest.approx(2.5e-4, rel=1e-12)
        assert cosine_lr(79, 80, 5e-4) > 0.0

    def test_monotone_decrease(self):
        values = [cosine_lr(e, 30, 1e-3) for e in range(30)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_range_validation(self):
        with pytest.raises(ValueError, match="outside"):
            cosine_lr(80, 80, 1e-3)


def tiny_learnable_windows():
    """A small learnable set: coupled oscillator pair, 40 train windows."""
    cfg = SynthConfig(channels=3, length=1600,
                      base_freqs=[0.1, 0.25, 0.004],
                      coupling={0: [(0, 0, 1.0), (1, 0, 0.8), (2, 0, 0.4)],
                                1: [(0, 20, 1.0), (1, 20, 0.8), (2, 0, 0.4)],
                                2: [(0, 40, 0.9), (1, 40, 1.1), (2, 0, 0.4)]},
                      noise_std=0.05, seed=42)
    frame = generate(cfg)
    scaler = Scaler(mean=frame.values.mean(axis=0),
                    std=np.maximum(frame.values.std(axis=0), 1e-8))
    windows = slice_windows(frame, scaler, 60, 30)
    return windows


@pytest.fixture(scope="module")
def learn_cfg():
    return ModelConfig(n_channels=3, window_size=60, n_fft=128, embed_dim=16,
                       d_model=32, heads=4, transformer_layers=2, gat_layers=2,
                       gat_heads=4, ffn_dim=64, cnn_channels=(4, 8),
                       decoder_hidden=32, seed=1)


class TestTrainLoop:
    def test_smoke_two_epochs(self, rng, learn_cfg, tmp_path):
        windows = tiny_learnable_windows()[:12]
        train_cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
        params, history, best_epoch = train_loop(
            windows[:10], windows[10:], learn_cfg, train_cfg, LossWeights(),
            history_path=tmp_path / "history.csv")
        assert len(history) == 2
        assert 0 <= best_epoch < 2
        assert (tmp_path / "history.csv").exists()
        header = (tmp_path / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,lr,train_mag,train_phase,train_coh,train_total,val_total"

    def test_loss_decreases_on_learnable_fixture(self, learn_cfg):
        windows = tiny_learnable_windows()
        train_cfg = TrainConfig(epochs=5, batch_size=8, lr=2e-3, seed=5)
        _, history, _ = train_loop(windows[:40], windows[40:48], learn_cfg,
                                   train_cfg, LossWeights())
        first, last = history[0]["train_total"], history[-1]["train_total"]
        assert last < 0.8 * first, (first, last)

    def test_identical_seeds_bit_identical_history(self, learn_cfg):
        windows = tiny_learnable_windows()[:14]
        train_cfg = TrainConfig(epochs=2, batch_size=4, seed=9)

        def run():
            params, history, _ = train_loop(windows[:10], windows[10:],
                                            learn_cfg, train_cfg, LossWeights())
            return history, params.copy_values()

        h1, p1 = run()
        h2, p2 = run()
        assert h1 == h2
        for name in p1:
            np.testing.assert_array_equal(p1[name], p2[name])

    def test_empty_sets_rejected(self, learn_cfg):
        with pytest.raises(TrainingError, match="non-empty"):
            train_loop([], [], learn_cfg, TrainConfig(epochs=1), LossWeights())
