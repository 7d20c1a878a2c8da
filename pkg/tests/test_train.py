import math

import numpy as np
import pytest

from condenhance import train as train_mod
from condenhance.data import sample_batch, synth_generate
from condenhance.losses import LossWeights
from condenhance.networks import init_params
from condenhance.optim import AdamState
from condenhance.rng import Streams
from condenhance.train import (
    NonFiniteLossError,
    TrainConfig,
    discriminator_step,
    format_key_values,
    generator_losses,
    generator_step,
    load_state,
    parse_key_values,
    run_training,
    train_step,
)

TINY = dict(image_size=16, synth_count=6, synth_test_count=2, batch_size=2)


@pytest.fixture(scope="module")
def dataset():
    return synth_generate(TrainConfig(**TINY).synthetic_spec())


@pytest.fixture
def batch(dataset):
    return sample_batch(dataset, np.random.default_rng(0), 2)


def _snapshot(params):
    return {k: p.data.copy() for k, p in params.items()}


class TestConfig:
    def test_parse_and_format_round_trip(self):
        cfg = parse_key_values("lr = 1e-4\n# comment\nbatch_size=8\nscale_mode = paper-literal\n", TrainConfig)
        assert cfg.lr == 1e-4 and cfg.batch_size == 8 and cfg.scale_mode == "paper-literal"
        assert parse_key_values(format_key_values(cfg), TrainConfig) == cfg

    def test_unknown_key_named(self):
        with pytest.raises(KeyError, match="learning_rate"):
            parse_key_values("learning_rate = 1\n", TrainConfig)

    def test_malformed_line(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_key_values("lr 1e-4\n", TrainConfig)

    @pytest.mark.parametrize("kwargs", [dict(image_size=12), dict(lr=0.0), dict(batch_size=0),
                                        dict(lambda_gan_split=2.0), dict(checkpoint_interval=0)])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.betas, cfg.adam_eps, cfg.batch_size, cfg.image_size) == \
               (5e-5, (0.9, 0.999), 1e-8, 4, 32)
        assert cfg.weights == LossWeights(0.9, 0.05)


class TestStep:
    def test_losses_finite_and_parameters_change(self, batch):
        bundle = init_params(0)
        before = _snapshot(bundle.state_dict())
        report = train_step(bundle, batch, AdamState(), AdamState(), TrainConfig(**TINY))
        assert set(report) == {"l_idem", "l_spa", "l_color", "l_gan_g", "l_total", "l_gan_d"}
        assert all(math.isfinite(v) for v in report.values())
        assert any(not np.array_equal(before[k], p.data) for k, p in bundle.state_dict().items())

    def test_generator_step_descends_with_gan_off(self, batch):
        cfg = TrainConfig(lr=1e-6, alpha_gan=0.0, **TINY)
        bundle = init_params(0)
        x, y, r = batch
        before = generator_losses(bundle, x, y, r, cfg.weights)[0].item()
        generator_step(bundle, x, y, r, AdamState(), cfg)
        after = generator_losses(bundle, x, y, r, cfg.weights)[0].item()
        assert after < before

    def test_discriminator_step_leaves_generator_side_alone(self, batch):
        bundle = init_params(0)
        g_only = {k: p for k, p in bundle.generator_parameters().items() if not k.startswith("cond_net.")}
        before = _snapshot(g_only)
        cond_before = bundle.cond_net.convs[0].weight.data.copy()
        discriminator_step(bundle, *batch, AdamState(), TrainConfig(**TINY))
        assert all(np.array_equal(before[k], p.data) for k, p in g_only.items())
        # the generator path sees the D-step update of the shared CondNet
        assert not np.array_equal(cond_before, bundle.cond_net.convs[0].weight.data)

    def test_condnet_updated_in_both_phases(self, batch):
        bundle = init_params(0)
        sg, sd = AdamState(), AdamState()
        train_step(bundle, batch, sg, sd, TrainConfig(**TINY))
        assert sg.t == 1 and sd.t == 1
        assert "cond_net.convs.0.weight" in sg.m and "cond_net.convs.0.weight" in sd.m
        assert not any(k.startswith("translator.") for k in sd.m)
        assert not any(k.startswith("discriminator.") for k in sg.m)


class TestRuns:
    def test_same_seed_same_log(self, dataset, tmp_path):
        cfg = TrainConfig(iterations=3, **TINY)
        run_training(cfg, tmp_path / "a", dataset=dataset)
        run_training(cfg, tmp_path / "b", dataset=dataset)
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "loss_log.csv").read_bytes() == (b / "loss_log.csv").read_bytes()
        assert (a / "checkpoint_000003.lmc").read_bytes() == (b / "checkpoint_000003.lmc").read_bytes()

    def test_resume_reproduces_uninterrupted_run(self, dataset, tmp_path):
        full = TrainConfig(iterations=6, checkpoint_interval=3, **TINY)
        run_training(full, tmp_path / "full", dataset=dataset)
        run_training(TrainConfig(iterations=3, **TINY), tmp_path / "part", dataset=dataset)
        state, seed = load_state(tmp_path / "part" / "checkpoint_000003.lmc")
        assert state.iteration == 3 and seed == 0
        run_training(full, tmp_path / "part", dataset=dataset, state=state)
        for name in ("loss_log.csv", "checkpoint_000006.lmc"):
            assert (tmp_path / "part" / name).read_bytes() == (tmp_path / "full" / name).read_bytes()

    def test_resume_drops_log_rows_past_checkpoint(self, dataset, tmp_path):
        out = tmp_path / "r"
        run_training(TrainConfig(iterations=4, checkpoint_interval=2, **TINY), out, dataset=dataset)
        state, _ = load_state(out / "checkpoint_000002.lmc")
        run_training(TrainConfig(iterations=3, **TINY), out, dataset=dataset, state=state)
        rows = (out / "loss_log.csv").read_text().splitlines()[1:]
        assert [r.split(",")[0] for r in rows] == ["1", "2", "3"]

    def test_non_finite_loss_aborts_and_keeps_checkpoint(self, dataset, tmp_path, monkeypatch):
        real = train_mod.train_step
        calls = []

        def flaky(*args, **kwargs):
            calls.append(1)
            if len(calls) == 3:
                raise NonFiniteLossError("non-finite losses: {'l_idem': nan}")
            return real(*args, **kwargs)

        monkeypatch.setattr(train_mod, "train_step", flaky)
        with pytest.raises(NonFiniteLossError):
            run_training(TrainConfig(iterations=5, checkpoint_interval=2, **TINY), tmp_path, dataset=dataset)
        assert (tmp_path / "checkpoint_000002.lmc").exists()
        assert len((tmp_path / "loss_log.csv").read_text().splitlines()) == 3

    def test_nan_detected_in_step(self, batch):
        bundle = init_params(0)
        bundle.translator.proj.bias.data[:] = np.nan
        with pytest.raises(NonFiniteLossError):
            train_step(bundle, batch, AdamState(), AdamState(), TrainConfig(**TINY))

    def test_batches_keyed_by_iteration(self, dataset):
        a = sample_batch(dataset, Streams(0).generator("batch", 5), 2)
        b = sample_batch(dataset, Streams(0).generator("batch", 5), 2)
        assert all(np.array_equal(u, v) for u, v in zip(a, b))
