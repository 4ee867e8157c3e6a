"""Discriminator, GAN/WGAN losses and the joint autoencoder + adversarial training loop.

Per minibatch the loop runs three phases:

1. autoencoder step on the masked Frobenius reconstruction loss (Adam);
2. `critic_steps` discriminator steps, real batch against fakes decoded from
   the uniform prior without a graph; under wgan the weights are clipped
   after every step;
3. one generator step through the decoding path (expansion, decoder,
   output projection). The encoder is never touched by phases 2 and 3.

scheme="none" runs phase 1 only and never builds the discriminator.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from tsae_tool.config import RunConfig, TransformerConfig
from tsae_tool.core import diffcore as dc
from tsae_tool.core import transformer_ae as tae
from tsae_tool.core.checkpoint import SUFFIX, Checkpoint, save_checkpoint
from tsae_tool.core.conv_ae import ConvAutoencoder
from tsae_tool.core.conv_ae import build_params as build_cae_params
from tsae_tool.core.datapipe import PAD_VALUE, stack_batch
from tsae_tool.core.diffcore import DiffTensor
from tsae_tool.core.params import ParameterStore, clip_weights, init_xavier, optimizer_step
from tsae_tool.core.transformer_ae import TransformerAutoencoder
from tsae_tool.errors import CompatibilityError, ConfigError, GenerationDivergedError, NumericalError
from tsae_tool.models import Dataset, MultivariateSeries

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
GENERATION_CHUNK = 32

# seed streams: default_rng([seed, stream])
STREAM_INIT = 0
STREAM_PRIOR = 1
STREAM_DROPOUT = 2
STREAM_SHUFFLE = 3

Autoencoder = TransformerAutoencoder | ConvAutoencoder


# ---------- prior ----------
@dataclass
class PriorSampler:
    k: int
    rng: np.random.Generator

    def sample(self, n: int | None = None) -> np.ndarray:
        """Draws from U[-1, 1)^k; `n` rows when given."""
        size = (self.k,) if n is None else (n, self.k)
        return self.rng.uniform(-1.0, 1.0, size=size)


def sample_prior(sampler: PriorSampler, n: int | None = None) -> np.ndarray:
    return sampler.sample(n)


# ---------- discriminator ----------
def discriminator_config(run: RunConfig) -> TransformerConfig:
    """The critic is a Transformer encoder with the autoencoder's settings, framed with SOS."""
    if run.model == "cae":
        return dataclasses.replace(run.transformer, v=run.cae.v, slen=run.cae.slen + 1)
    return run.transformer


def build_discriminator_params(config: TransformerConfig) -> ParameterStore:
    config.validate()
    store = ParameterStore()
    tae.add_encoder_params(store, "disc.enc", config)
    store.add("disc.bottleneck.weight", (config.k, config.slen * config.d), "weight")
    store.add("disc.bottleneck.bias", (config.k,), "bias")
    store.add("disc.head.weight", (1, config.k), "weight")
    store.add("disc.head.bias", (1,), "bias")
    return store


def create_discriminator(config: TransformerConfig, rng: np.random.Generator) -> ParameterStore:
    store = build_discriminator_params(config)
    init_xavier(store, rng)
    return store


def discriminate(x, params: ParameterStore, config: TransformerConfig, scheme: str, mask=None) -> DiffTensor:
    """(b, slen, v) SOS-framed batch -> (b,) scores; probabilities under gan, raw critic values under wgan."""
    z = tae.encoder_stack(x, params, config, "disc.enc", mask)
    flat = z.reshape(z.shape[0], config.slen * config.d)
    code = dc.elementwise(tae.linear(flat, params, "disc.bottleneck"), "tanh")
    score = tae.linear(code, params, "disc.head").reshape(z.shape[0])
    if scheme == "gan":
        return dc.elementwise(score, "sigmoid")
    return score


# ---------- losses ----------
def gan_discriminator_loss(d_real, d_fake) -> DiffTensor:
    """-(1/b) sum[log D(x) + log(1 - D(G(z)))], probabilities clamped to [eps, 1 - eps]."""
    real = dc.clamp(dc.as_tensor(d_real), PROB_EPS, 1.0 - PROB_EPS)
    fake = dc.clamp(dc.as_tensor(d_fake), PROB_EPS, 1.0 - PROB_EPS)
    return -(dc.log(real).mean() + dc.log(1.0 - fake).mean())


def gan_generator_loss(d_fake) -> DiffTensor:
    """Non-saturating form: -(1/b) sum log D(G(z))."""
    fake = dc.clamp(dc.as_tensor(d_fake), PROB_EPS, 1.0 - PROB_EPS)
    return -dc.log(fake).mean()


def wgan_losses(d_real, d_fake) -> tuple[DiffTensor, DiffTensor]:
    real, fake = dc.as_tensor(d_real), dc.as_tensor(d_fake)
    critic = -(real.mean() - fake.mean())
    return critic, wgan_generator_loss(fake)


def wgan_generator_loss(d_fake) -> DiffTensor:
    return -dc.as_tensor(d_fake).mean()


def reconstruction_loss(pred, target, mask: np.ndarray | None = None) -> DiffTensor:
    """Mean over the batch of the per-sample Frobenius norm of the residual; padded steps excluded."""
    residual = dc.as_tensor(pred) - target
    if mask is not None:
        residual = residual * mask[:, :, None].astype(np.float64)
    return dc.frobenius(residual, axes=(1, 2)).mean()


def masked_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None) -> float:
    sq = (pred - target) ** 2
    if mask is None:
        return float(sq.mean())
    weights = np.broadcast_to(mask[:, :, None], sq.shape)
    return float(sq[weights].mean())


# ---------- model construction ----------
def build_autoencoder(run: RunConfig, rng: np.random.Generator) -> Autoencoder:
    if run.model == "tae":
        return TransformerAutoencoder.create(run.transformer, rng)
    if run.model == "cae":
        return ConvAutoencoder.create(run.cae, rng)
    raise ConfigError(f"unknown model kind {run.model!r}", "model")


def fit_to_dataset(run: RunConfig, dataset: Dataset) -> RunConfig:
    """Sets v and the sequence length of both model families from the dataset."""
    v, length = dataset.v, dataset.nominal_length
    transformer = dataclasses.replace(run.transformer, v=v, slen=length + 1)
    cae = dataclasses.replace(run.cae, v=v, slen=length)
    if transformer != run.transformer or cae != run.cae:
        logger.info("Model shape set from dataset: v=%d, length=%d (+1 SOS row for the Transformer)", v, length)
    return dataclasses.replace(run, transformer=transformer, cae=cae)


def _check_dataset(model: Autoencoder, dataset: Dataset) -> None:
    if dataset.v != model.config.v:
        raise ConfigError(f"dataset has v={dataset.v}, model expects {model.config.v}", f"{_section(model)}.v")
    if dataset.nominal_length > model.series_length:
        raise ConfigError(
            f"dataset series run to {dataset.nominal_length} steps, model holds {model.series_length}",
            f"{_section(model)}.slen",
        )


def _section(model: Autoencoder) -> str:
    return "transformer" if model.kind == "tae" else "cae"


def _expected_shapes(run: RunConfig) -> dict[str, tuple[int, ...]]:
    store = tae.build_params(run.transformer) if run.model == "tae" else build_cae_params(run.cae)
    return {name: t.shape for name, t in store.items()}


def model_from_checkpoint(ckpt: Checkpoint) -> Autoencoder:
    stored = {name: t.shape for name, t in ckpt.model.items()}
    if stored != _expected_shapes(ckpt.run):
        raise CompatibilityError(f"checkpoint parameters do not match a {ckpt.run.label} model built from its config")
    if ckpt.run.model == "tae":
        return TransformerAutoencoder(ckpt.run.transformer, ckpt.model)
    return ConvAutoencoder(ckpt.run.cae, ckpt.model)


# ---------- callbacks ----------
@dataclass(frozen=True)
class EpochSummary:
    epoch: int
    recon_loss: float
    recon_mse: float
    d_loss: float = math.nan
    g_loss: float = math.nan

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class TrainingCallback:
    """Hooks observed by `train`; override what you need."""

    def on_ae_step(self, epoch: int, batch: int, loss: float, model: Autoencoder) -> None:
        pass

    def on_critic_step(self, epoch: int, batch: int, step: int, loss: float, discriminator: ParameterStore) -> None:
        pass

    def on_generator_step(self, epoch: int, batch: int, loss: float) -> None:
        pass

    def on_epoch_end(self, epoch: int, summary: EpochSummary) -> None:
        pass


class LossHistory(TrainingCallback):
    COLUMNS = ["epoch", "recon_loss", "recon_mse", "d_loss", "g_loss"]

    def __init__(self):
        self.rows: list[EpochSummary] = []

    def on_epoch_end(self, epoch: int, summary: EpochSummary) -> None:
        self.rows.append(summary)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows], columns=self.COLUMNS)

    def write_csv(self, path: str) -> str:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(p, index=False)
        return str(p)


# ---------- training ----------
def _frame(values: np.ndarray, sos_value: float) -> np.ndarray:
    sos = np.full((values.shape[0], 1, values.shape[2]), sos_value)
    return np.concatenate([sos, values], axis=1)


def _frame_mask(mask: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ones((mask.shape[0], 1), dtype=bool), mask], axis=1)


def _pad_steps(fake: DiffTensor, length: int) -> DiffTensor:
    missing = length - fake.shape[1]
    if missing <= 0:
        return fake
    pad = np.full((fake.shape[0], missing, fake.shape[2]), PAD_VALUE)
    return dc.concat([fake, pad], axis=1)


def _finite(value: float, what: str, epoch: int, batch: int) -> float:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {what} loss at epoch {epoch}, batch {batch}: {value}")
    return value


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(seed: int, stream: int, state: dict | None) -> np.random.Generator:
    rng = np.random.default_rng([seed, stream])
    if state:
        rng.bit_generator.state = state
    return rng


class Trainer:
    """Holds the models, optimizer stores and random streams for one run of the loop."""

    def __init__(self, dataset: Dataset, run: RunConfig, callbacks: Sequence[TrainingCallback] = (), resume: Checkpoint | None = None):
        run.validate(check_paths=False)
        self.run = run
        self.dataset = dataset
        self.callbacks = list(callbacks)
        self.gan = run.gan.resolved(run.model)
        self.scheme = run.scheme
        seed = run.seed

        init_rng = np.random.default_rng([seed, STREAM_INIT])
        self.model = build_autoencoder(run, init_rng)
        _check_dataset(self.model, dataset)
        self.disc_config = discriminator_config(run)
        self.disc: ParameterStore | None = None
        if self.scheme != "none":
            self.disc = create_discriminator(self.disc_config, init_rng)
        self.gen_store = self.model.params.subset(self.model.generator_names())
        self.ae_optimizer = self.gan.ae_optimizer(run.model)
        self.adv_optimizer = self.gan.adversarial_optimizer(run.model)

        rng_states = resume.rng_states if resume is not None else {}
        self.prior = PriorSampler(self.model.k, _restore_rng(seed, STREAM_PRIOR, rng_states.get("prior")))
        self.dropout_rng = _restore_rng(seed, STREAM_DROPOUT, rng_states.get("dropout"))
        self.start_epoch = 0
        if resume is not None:
            self._load(resume)

        self.values, self.mask = stack_batch(dataset.train, self.model.series_length)
        self.sos_value = dataset.sos_value

    def _load(self, ckpt: Checkpoint) -> None:
        if ckpt.run.model != self.run.model or ckpt.run.scheme != self.scheme:
            raise CompatibilityError(f"cannot resume a {ckpt.run.label} checkpoint as {self.run.label}")
        self.model.params.load_values(ckpt.model.snapshot())
        self.model.params.load_state(ckpt.model.state, ckpt.model.step_count)
        self.gen_store.load_state(ckpt.generator_state, ckpt.generator_steps)
        if self.disc is not None:
            if ckpt.discriminator is None:
                raise CompatibilityError("checkpoint carries no discriminator")
            self.disc.load_values(ckpt.discriminator.snapshot())
            self.disc.load_state(ckpt.discriminator.state, ckpt.discriminator.step_count)
        self.start_epoch = ckpt.epoch
        logger.info("Resuming %s at epoch %d", self.run.label, ckpt.epoch)

    def checkpoint(self, epoch: int) -> Checkpoint:
        return Checkpoint(
            run=self.run,
            model=self.model.params,
            discriminator=self.disc,
            generator_state=self.gen_store.state,
            generator_steps=self.gen_store.step_count,
            stats=self.dataset.stats,
            sos_value=self.sos_value,
            epoch=epoch,
            rng_states={"prior": _rng_state(self.prior.rng), "dropout": _rng_state(self.dropout_rng)},
        )

    # phases
    def ae_step(self, epoch: int, batch: int, x: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
        rng = self.dropout_rng if getattr(self.model.config, "dropout", 0.0) > 0 else None
        pred = self.model.reconstruction(x, mask, rng)
        loss = reconstruction_loss(pred, x, mask)
        value = _finite(loss.item(), "reconstruction", epoch, batch)
        dc.backward(loss)
        optimizer_step(self.model.params, self.ae_optimizer)
        for cb in self.callbacks:
            cb.on_ae_step(epoch, batch, value, self.model)
        return value, masked_mse(pred.values, x, mask)

    def _score(self, framed, mask=None) -> DiffTensor:
        return discriminate(framed, self.disc, self.disc_config, self.scheme, mask)

    def _fake_batch(self, n: int, with_graph: bool) -> DiffTensor:
        z = self.prior.sample(n)
        if with_graph:
            fake = self.model.decode_prior(z, unroll_grad=self.gan.unroll_grad)
        else:
            with dc.no_grad():
                fake = self.model.decode_prior(z)
        fake = _pad_steps(fake, self.model.series_length)
        sos = np.full((n, 1, fake.shape[2]), self.sos_value)
        return dc.concat([sos, fake], axis=1)

    def critic_step(self, epoch: int, batch: int, step: int, x: np.ndarray, mask: np.ndarray) -> float:
        fake = self._fake_batch(x.shape[0], with_graph=False)
        d_real = self._score(_frame(x, self.sos_value), _frame_mask(mask))
        d_fake = self._score(fake)
        if self.scheme == "wgan":
            loss, _ = wgan_losses(d_real, d_fake)
        else:
            loss = gan_discriminator_loss(d_real, d_fake)
        value = _finite(loss.item(), "discriminator", epoch, batch)
        dc.backward(loss)
        optimizer_step(self.disc, self.adv_optimizer)
        if self.scheme == "wgan":
            clip_weights(self.disc, self.gan.clip_bound)
        for cb in self.callbacks:
            cb.on_critic_step(epoch, batch, step, value, self.disc)
        return value

    def generator_step(self, epoch: int, batch: int, n: int) -> float:
        d_fake = self._score(self._fake_batch(n, with_graph=True))
        if self.scheme == "wgan":
            loss = wgan_generator_loss(d_fake)
        else:
            loss = gan_generator_loss(d_fake)
        value = _finite(loss.item(), "generator", epoch, batch)
        dc.backward(loss)
        optimizer_step(self.gen_store, self.adv_optimizer)
        self.disc.zero_grad()
        for cb in self.callbacks:
            cb.on_generator_step(epoch, batch, value)
        return value

    def run_epoch(self, epoch: int) -> EpochSummary:
        n = self.values.shape[0]
        order = np.random.default_rng([self.run.seed, STREAM_SHUFFLE, epoch]).permutation(n)
        recon, mse, d_losses, g_losses = [], [], [], []
        for batch, start in enumerate(range(0, n, self.gan.batch_size)):
            idx = order[start : start + self.gan.batch_size]
            x, mask = self.values[idx], self.mask[idx]
            r, m = self.ae_step(epoch, batch, x, mask)
            recon.append(r)
            mse.append(m)
            if self.scheme != "none":
                for step in range(self.gan.critic_steps):
                    d_losses.append(self.critic_step(epoch, batch, step, x, mask))
                g_losses.append(self.generator_step(epoch, batch, x.shape[0]))
            logger.debug(
                "epoch %d batch %d: recon=%.6f d=%s g=%s",
                epoch,
                batch,
                r,
                f"{d_losses[-1]:.6f}" if d_losses else "-",
                f"{g_losses[-1]:.6f}" if g_losses else "-",
            )
        return EpochSummary(
            epoch=epoch,
            recon_loss=float(np.mean(recon)),
            recon_mse=float(np.mean(mse)),
            d_loss=float(np.mean(d_losses)) if d_losses else math.nan,
            g_loss=float(np.mean(g_losses)) if g_losses else math.nan,
        )

    def fit(self, checkpoint_dir: str | None = None) -> Checkpoint:
        epochs = self.gan.epochs
        logger.info(
            "Training %s: %d parameters, %d series, epochs %d-%d, batch %d",
            self.run.label,
            self.model.params.count(),
            self.values.shape[0],
            self.start_epoch,
            epochs,
            self.gan.batch_size,
        )
        for epoch in range(self.start_epoch, epochs):
            summary = self.run_epoch(epoch)
            logger.info(
                "epoch %d: recon=%.6f mse=%.6f d=%.6f g=%.6f",
                epoch,
                summary.recon_loss,
                summary.recon_mse,
                summary.d_loss,
                summary.g_loss,
            )
            for cb in self.callbacks:
                cb.on_epoch_end(epoch, summary)
            every = self.run.checkpoint_every
            if checkpoint_dir and every and (epoch + 1) % every == 0:
                save_checkpoint(str(Path(checkpoint_dir) / f"epoch_{epoch + 1:05d}{SUFFIX}"), self.checkpoint(epoch + 1))
        return self.checkpoint(max(epochs, self.start_epoch))


def train(
    dataset: Dataset,
    run: RunConfig,
    callbacks: Sequence[TrainingCallback] = (),
    resume: Checkpoint | None = None,
    checkpoint_dir: str | None = None,
) -> Checkpoint:
    return Trainer(dataset, run, callbacks, resume).fit(checkpoint_dir)


# ---------- generation ----------
def generate_batch(ckpt: Checkpoint, n: int, seed: int) -> list[MultivariateSeries]:
    """n series decoded from prior draws, in normalized space (`normalized=True`)."""
    if n < 0:
        raise ConfigError("must be >= 0", "n")
    if n == 0:
        return []
    model = model_from_checkpoint(ckpt)
    sampler = PriorSampler(model.k, np.random.default_rng([seed, STREAM_PRIOR]))
    out: list[MultivariateSeries] = []
    with dc.no_grad():
        for offset in range(0, n, GENERATION_CHUNK):
            count = min(GENERATION_CHUNK, n - offset)
            z = sampler.sample(count)
            try:
                values = model.decode_prior(z).values
            except GenerationDivergedError as e:
                raise GenerationDivergedError(e.step, offset + (e.sample or 0)) from e
            lengths = model.output_lengths(values)
            for i in range(count):
                out.append(
                    MultivariateSeries(values=values[i, : lengths[i]], label=f"generated_{offset + i:04d}", normalized=True)
                )
    logger.info("Generated %d series from %s checkpoint (seed %d)", n, ckpt.label, seed)
    return out
