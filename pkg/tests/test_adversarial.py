from __future__ import annotations

import dataclasses
import json
import math
import struct

import numpy as np
import pytest

from tsae_tool.config import RunConfig, preset
from tsae_tool.core import adversarial
from tsae_tool.core.adversarial import (
    LossHistory,
    PriorSampler,
    TrainingCallback,
    discriminator_config,
    fit_to_dataset,
    gan_discriminator_loss,
    gan_generator_loss,
    generate_batch,
    model_from_checkpoint,
    reconstruction_loss,
    train,
    wgan_losses,
)
from tsae_tool.core.checkpoint import MAGIC, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from tsae_tool.core.datapipe import load_dataset_dir
from tsae_tool.core.demo_data import write_demo_dataset
from tsae_tool.errors import CheckpointError, CompatibilityError, ConfigError


class StepCounter(TrainingCallback):
    def __init__(self):
        self.ae = 0
        self.critic: dict[tuple[int, int], int] = {}
        self.generator = 0
        self.worst_weight = 0.0

    def on_ae_step(self, epoch, batch, loss, model):
        self.ae += 1

    def on_critic_step(self, epoch, batch, step, loss, discriminator):
        self.critic[(epoch, batch)] = self.critic.get((epoch, batch), 0) + 1
        for _, p in discriminator.items():
            self.worst_weight = max(self.worst_weight, float(np.abs(p.values).max()))

    def on_generator_step(self, epoch, batch, loss):
        self.generator += 1


@pytest.fixture
def sine(sine_dir):
    return load_dataset_dir(str(sine_dir))


# ---------- losses ----------
def test_gan_losses_at_even_odds():
    half = np.full(4, 0.5)
    assert abs(gan_discriminator_loss(half, half).item() - 2 * math.log(2)) <= 1e-12
    assert abs(gan_generator_loss(half).item() - math.log(2)) <= 1e-12


def test_gan_losses_clamp_certain_scores():
    loss = gan_discriminator_loss(np.array([1.0]), np.array([1.0])).item()
    assert math.isfinite(loss)
    assert loss == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_wgan_losses():
    critic, gen = wgan_losses(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    assert critic.item() == pytest.approx(-1.0)
    assert gen.item() == pytest.approx(-0.5)


def test_reconstruction_loss_ignores_padding():
    pred = np.zeros((2, 3, 2))
    target = np.ones((2, 3, 2))
    mask = np.array([[True, True, False], [True, False, False]])
    # per-sample Frobenius norms: sqrt(4) and sqrt(2)
    assert reconstruction_loss(pred, target, mask).item() == pytest.approx((2.0 + math.sqrt(2.0)) / 2)
    assert reconstruction_loss(pred, target).item() == pytest.approx(math.sqrt(6.0))


def test_prior_draws_stay_in_range():
    draws = PriorSampler(5, np.random.default_rng(0)).sample(1000)
    assert draws.shape == (1000, 5)
    assert draws.min() >= -1.0 and draws.max() < 1.0


def test_cae_critic_is_framed_with_sos(make_run):
    config = discriminator_config(make_run(model="cae"))
    assert config.slen == 9 and config.v == 3


# ---------- training loop ----------
def test_scheme_none_never_builds_a_discriminator(sine, make_run, monkeypatch):
    def forbidden(*args, **kwargs):
        raise AssertionError("discriminator used with scheme none")

    monkeypatch.setattr(adversarial, "discriminate", forbidden)
    counter = StepCounter()
    ckpt = train(sine, make_run(), [counter])
    assert ckpt.discriminator is None
    assert counter.ae == 4 and counter.generator == 0 and not counter.critic


def test_wgan_runs_five_critic_steps_and_clips(sine, make_run):
    counter = StepCounter()
    ckpt = train(sine, make_run(scheme="wgan"), [counter])
    assert set(counter.critic.values()) == {5}
    assert counter.generator == 4
    assert counter.worst_weight <= 0.1
    assert max(np.abs(p.values).max() for _, p in ckpt.discriminator.items()) <= 0.1


def test_gan_runs_one_critic_step(sine, make_run):
    counter = StepCounter()
    train(sine, make_run(scheme="gan"), [counter])
    assert set(counter.critic.values()) == {1}


def test_generator_phase_leaves_encoder_alone(sine, make_run):
    class EncoderWatch(TrainingCallback):
        def __init__(self):
            self.model = None
            self.before = None
            self.changed = False

        def on_ae_step(self, epoch, batch, loss, model):
            self.model = model
            self.before = model.params["enc.embed.weight"].values.copy()

        def on_generator_step(self, epoch, batch, loss):
            now = self.model.params["enc.embed.weight"].values
            self.changed |= not np.array_equal(now, self.before)

    watch = EncoderWatch()
    train(sine, make_run(scheme="gan"), [watch])
    assert not watch.changed


def test_loss_history_records_epochs(sine, make_run, tmp_path):
    history = LossHistory()
    train(sine, make_run(scheme="gan", epochs=3), [history])
    frame = history.to_frame()
    assert list(frame["epoch"]) == [0, 1, 2]
    assert frame["d_loss"].notna().all()
    path = history.write_csv(str(tmp_path / "loss.csv"))
    assert open(path, encoding="utf-8").readline().strip() == ",".join(LossHistory.COLUMNS)


@pytest.mark.parametrize("model, scheme", [("tae", "wgan"), ("cae", "gan")])
def test_training_is_bit_reproducible(sine, make_run, model, scheme):
    run = make_run(model=model, scheme=scheme)
    assert to_bytes(train(sine, run)) == to_bytes(train(sine, run))


def test_resume_matches_uninterrupted_run(sine, make_run, tmp_path):
    run = dataclasses.replace(make_run(scheme="gan", epochs=2), checkpoint_every=1)
    full = train(sine, run, checkpoint_dir=str(tmp_path))
    halfway = load_checkpoint(str(tmp_path / "epoch_00001.tsae"))
    assert halfway.epoch == 1
    resumed = train(sine, run, resume=halfway)
    assert to_bytes(resumed) == to_bytes(full)


def test_resume_rejects_other_scheme(sine, make_run):
    ckpt = train(sine, make_run(scheme="gan", epochs=1))
    with pytest.raises(CompatibilityError):
        train(sine, make_run(scheme="wgan", epochs=2), resume=ckpt)


def test_dataset_shape_mismatch_is_config_error(sine, make_run):
    run = make_run()
    run = dataclasses.replace(run, transformer=dataclasses.replace(run.transformer, v=4))
    with pytest.raises(ConfigError):
        train(sine, run)


def test_fit_to_dataset_sets_shapes(sine):
    run = fit_to_dataset(RunConfig(), sine)
    assert (run.transformer.v, run.transformer.slen) == (3, 9)
    assert (run.cae.v, run.cae.slen) == (3, 8)


# ---------- checkpoints ----------
def test_checkpoint_round_trip_is_bit_exact(sine, make_run, tmp_path):
    ckpt = train(sine, make_run(scheme="wgan", epochs=1))
    data = to_bytes(ckpt)
    assert data.startswith(MAGIC)
    again = from_bytes(data)
    assert to_bytes(again) == data
    for name, p in ckpt.model.items():
        np.testing.assert_array_equal(again.model[name].values, p.values)
    path = save_checkpoint(str(tmp_path / "model.tsae"), ckpt)
    assert to_bytes(load_checkpoint(path)) == data
    assert model_from_checkpoint(again).kind == "tae"


def test_corrupt_checkpoints_are_rejected(sine, make_run):
    data = to_bytes(train(sine, make_run(epochs=1)))
    with pytest.raises(CompatibilityError):
        from_bytes(b"NOTACKPT" + data[len(MAGIC) :])
    with pytest.raises(CheckpointError):
        from_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        from_bytes(data + b"\0")


def _without_header_key(data: bytes, key: str) -> bytes:
    start = len(MAGIC) + 4
    (length,) = struct.unpack_from("<Q", data, start)
    header = json.loads(data[start + 8 : start + 8 + length])
    del header[key]
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return data[:start] + struct.pack("<Q", len(raw)) + raw + data[start + 8 + length :]


@pytest.mark.parametrize("key", ["epoch", "sos_value", "blobs", "run"])
def test_header_missing_a_key_is_a_checkpoint_error(sine, make_run, key):
    data = to_bytes(train(sine, make_run(epochs=1)))
    with pytest.raises(CheckpointError, match="unreadable header"):
        from_bytes(_without_header_key(data, key))


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(str(tmp_path / "absent.tsae"))


# ---------- generation ----------
def test_generate_batch_is_seeded(sine, make_run):
    ckpt = train(sine, make_run(epochs=1))
    first = generate_batch(ckpt, 5, seed=7)
    second = generate_batch(ckpt, 5, seed=7)
    other = generate_batch(ckpt, 5, seed=8)
    assert [s.label for s in first] == [f"generated_{i:04d}" for i in range(5)]
    assert all(s.normalized and s.values.shape == (8, 3) for s in first)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(first[0].values, other[0].values)
    assert generate_batch(ckpt, 0, seed=7) == []
    with pytest.raises(ConfigError):
        generate_batch(ckpt, -1, seed=7)


@pytest.mark.slow
def test_smoke_training_reduces_reconstruction_loss(tmp_path):
    write_demo_dataset(str(tmp_path / "SINE"), "SINE", seed=0)
    dataset = load_dataset_dir(str(tmp_path / "SINE"))
    run = preset("smoke")
    run = dataclasses.replace(run, gan=dataclasses.replace(run.gan, epochs=300, batch_size=10, ae_learning_rate=1e-3))
    history = LossHistory()
    train(dataset, fit_to_dataset(run, dataset), [history])
    mse = history.to_frame()["recon_mse"]
    assert mse.iloc[-1] < 0.1 * mse.iloc[0]
