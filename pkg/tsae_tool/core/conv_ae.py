"""Convolutional autoencoder baseline over the variable-concatenated 1-D signal."""
from __future__ import annotations

import logging

import numpy as np

from tsae_tool.config import CaeConfig
from tsae_tool.core import diffcore as dc
from tsae_tool.core.diffcore import DiffTensor
from tsae_tool.core.params import ParameterStore, init_normal
from tsae_tool.errors import ShapeError

logger = logging.getLogger(__name__)

INIT_STDDEV = 0.02


def same_padding(kernel_size: int) -> tuple[int, int]:
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


def build_params(config: CaeConfig) -> ParameterStore:
    config.validate()
    store = ParameterStore()
    length = config.input_len
    c_in = 1
    for i, (c_out, s) in enumerate(zip(config.channel_schedule, config.kernel_sizes)):
        store.add(f"enc.conv.{i}.weight", (c_out, c_in, s), "weight")
        store.add(f"enc.conv.{i}.bias", (c_out,), "bias")
        c_in = c_out
    top = config.channel_schedule[-1]
    store.add("enc.agg.weight", (1, top, config.aggregation_kernel), "weight")
    store.add("enc.agg.bias", (1,), "bias")
    store.add("bottleneck.weight", (config.k, length), "weight")
    store.add("bottleneck.bias", (config.k,), "bias")

    store.add("expand.weight", (length, config.k), "weight")
    store.add("expand.bias", (length,), "bias")
    store.add("dec.agg.weight", (top, 1, config.aggregation_kernel), "weight")
    store.add("dec.agg.bias", (top,), "bias")
    for j, (c_in, c_out, s) in enumerate(_decoder_layers(config)):
        store.add(f"dec.conv.{j}.weight", (c_out, c_in, s), "weight")
        store.add(f"dec.conv.{j}.bias", (c_out,), "bias")
    return store


def _decoder_layers(config: CaeConfig) -> list[tuple[int, int, int]]:
    """(c_in, c_out, kernel) per decoder layer: the encoder schedule walked backwards down to one channel."""
    channels = (1,) + tuple(config.channel_schedule)
    layers = []
    for i in reversed(range(len(config.kernel_sizes))):
        layers.append((channels[i + 1], channels[i], config.kernel_sizes[i]))
    return layers


def create_params(config: CaeConfig, rng: np.random.Generator) -> ParameterStore:
    store = build_params(config)
    init_normal(store, INIT_STDDEV, rng)
    return store


def generator_param_names(store: ParameterStore) -> list[str]:
    return [n for n in store.names() if n.startswith(("expand.", "dec."))]


def concat_variables(x) -> DiffTensor:
    """(b, slen, v) -> (b, 1, v*slen): variable 0's full series first, then variable 1, and so on."""
    x = dc.as_tensor(x)
    b, slen, v = x.shape
    return x.transpose(0, 2, 1).reshape(b, 1, v * slen)


def split_variables(flat: DiffTensor, config: CaeConfig) -> DiffTensor:
    b = flat.shape[0]
    return flat.reshape(b, config.v, config.slen).transpose(0, 2, 1)


def _conv(x: DiffTensor, params: ParameterStore, name: str, mirrored: bool = False) -> DiffTensor:
    w = params[f"{name}.weight"]
    left, right = same_padding(w.shape[2])
    if mirrored:
        left, right = right, left
    return dc.conv1d(x, w, params[f"{name}.bias"], left, right)


def _check_input(x: DiffTensor, config: CaeConfig) -> None:
    if x.ndim != 3 or x.shape[1:] != (config.slen, config.v):
        raise ShapeError(f"expected (batch, {config.slen}, {config.v}) series, got {x.shape}")
    if config.input_len < config.receptive_field:
        raise ShapeError(
            f"concatenated length {config.input_len} is shorter than the receptive field {config.receptive_field}"
        )


def cae_encode(x, params: ParameterStore, config: CaeConfig) -> DiffTensor:
    """Normalized (b, slen, v) series -> (b, k) code in (-1, 1)."""
    x = dc.as_tensor(x)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    _check_input(x, config)
    h = concat_variables(x)
    for i in range(len(config.kernel_sizes)):
        h = dc.elementwise(_conv(h, params, f"enc.conv.{i}"), config.activation)
    h = _conv(h, params, "enc.agg")  # (b, 1, L)
    flat = h.reshape(h.shape[0], config.input_len)
    code = dc.matmul(flat, params["bottleneck.weight"].transpose()) + params["bottleneck.bias"]
    return dc.elementwise(code, "tanh")


def cae_decode(z, params: ParameterStore, config: CaeConfig) -> DiffTensor:
    """(b, k) code -> (b, slen, v) series."""
    z = dc.as_tensor(z)
    if z.ndim == 1:
        z = z.reshape(1, z.shape[0])
    if z.shape[-1] != config.k:
        raise ShapeError(f"latent code length {z.shape[-1]} does not match k={config.k}")
    flat = dc.matmul(z, params["expand.weight"].transpose()) + params["expand.bias"]
    h = flat.reshape(z.shape[0], 1, config.input_len)
    h = dc.elementwise(_conv(h, params, "dec.agg", mirrored=True), config.activation)
    last = len(config.kernel_sizes) - 1
    for j in range(len(config.kernel_sizes)):
        h = _conv(h, params, f"dec.conv.{j}", mirrored=True)
        if j < last:
            h = dc.elementwise(h, config.activation)
    return split_variables(h, config)


def cae_reconstruct(x, params: ParameterStore, config: CaeConfig) -> DiffTensor:
    return cae_decode(cae_encode(x, params, config), params, config)


class ConvAutoencoder:
    """Same surface as TransformerAutoencoder; works on series without an SOS row."""

    kind = "cae"

    def __init__(self, config: CaeConfig, params: ParameterStore):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: CaeConfig, rng: np.random.Generator) -> "ConvAutoencoder":
        return cls(config, create_params(config, rng))

    @property
    def series_length(self) -> int:
        return self.config.slen

    @property
    def k(self) -> int:
        return self.config.k

    def generator_names(self) -> list[str]:
        return generator_param_names(self.params)

    def reconstruction(self, values: np.ndarray, mask: np.ndarray | None = None, rng=None) -> DiffTensor:
        # padded steps still flow through the convolutions; the loss masks them out
        return cae_reconstruct(values, self.params, self.config)

    def encode_series(self, values: np.ndarray, mask: np.ndarray | None = None) -> DiffTensor:
        return cae_encode(values, self.params, self.config)

    def decode_prior(self, z, unroll_grad: bool = True) -> DiffTensor:
        return cae_decode(z, self.params, self.config)

    def output_lengths(self, values: np.ndarray) -> np.ndarray:
        return np.full(values.shape[0], values.shape[1], dtype=int)
