"""Transformer autoencoder: embedding, sinusoidal positions, post-LN encoder/decoder
stacks, a tanh bottleneck over the flattened memory and its re-expansion.

Parameter names follow `<stack>.<layer>.<sublayer>.<weight|bias>`; weights are
stored (out, in) and applied as x @ W.T + b.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from tsae_tool.config import TransformerConfig
from tsae_tool.core import diffcore as dc
from tsae_tool.core.diffcore import DiffTensor
from tsae_tool.core.params import ParameterStore, init_xavier
from tsae_tool.errors import GenerationDivergedError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncodedMemory:
    z_full: DiffTensor  # (b, slen, d)
    z_code: DiffTensor  # (b, k), in (-1, 1)
    z_expanded: DiffTensor  # (b, slen, d)


# ---------- parameter layout ----------
def _add_linear(store: ParameterStore, name: str, n_out: int, n_in: int, bias: bool = True) -> None:
    store.add(f"{name}.weight", (n_out, n_in), "weight")
    if bias:
        store.add(f"{name}.bias", (n_out,), "bias")


def _add_layer_norm(store: ParameterStore, name: str, d: int) -> None:
    store.add(f"{name}.gain", (d,), "gain")
    store.add(f"{name}.bias", (d,), "bias")


def _add_attention(store: ParameterStore, name: str, d: int) -> None:
    _add_linear(store, f"{name}.q", d, d)
    # no key bias: it shifts every score in a row equally, which softmax ignores
    _add_linear(store, f"{name}.k", d, d, bias=False)
    _add_linear(store, f"{name}.v", d, d)
    _add_linear(store, f"{name}.o", d, d)


def _add_feed_forward(store: ParameterStore, name: str, d: int, ff_dim: int) -> None:
    _add_linear(store, f"{name}.ff1", ff_dim, d)
    _add_linear(store, f"{name}.ff2", d, ff_dim)


def add_encoder_params(store: ParameterStore, prefix: str, config: TransformerConfig) -> None:
    d = config.d
    _add_linear(store, f"{prefix}.embed", d, config.v)
    for i in range(config.enc_layers):
        layer = f"{prefix}.layers.{i}"
        _add_attention(store, f"{layer}.attn", d)
        _add_layer_norm(store, f"{layer}.norm1", d)
        _add_feed_forward(store, layer, d, config.ff_dim)
        _add_layer_norm(store, f"{layer}.norm2", d)


def build_params(config: TransformerConfig) -> ParameterStore:
    """All autoencoder parameters, zero-filled; see `create_params` for initialized ones."""
    config.validate()
    store = ParameterStore()
    d = config.d
    add_encoder_params(store, "enc", config)
    _add_linear(store, "bottleneck", config.k, config.slen * d)
    _add_linear(store, "expand", config.slen * d, config.k)
    _add_linear(store, "dec.embed", d, config.v)
    for i in range(config.dec_layers):
        layer = f"dec.layers.{i}"
        _add_attention(store, f"{layer}.self_attn", d)
        _add_layer_norm(store, f"{layer}.norm1", d)
        _add_attention(store, f"{layer}.cross_attn", d)
        _add_layer_norm(store, f"{layer}.norm2", d)
        _add_feed_forward(store, layer, d, config.ff_dim)
        _add_layer_norm(store, f"{layer}.norm3", d)
    _add_linear(store, "out", config.v, d)
    return store


def create_params(config: TransformerConfig, rng: np.random.Generator) -> ParameterStore:
    store = build_params(config)
    init_xavier(store, rng)
    return store


def generator_param_names(store: ParameterStore) -> list[str]:
    """The decoding path a sampled code travels: expansion, decoder stack, output projection."""
    return [n for n in store.names() if n.startswith(("expand.", "dec.", "out."))]


# ---------- building blocks ----------
def linear(x: DiffTensor, params: ParameterStore, name: str) -> DiffTensor:
    y = dc.matmul(x, params[f"{name}.weight"].transpose())
    bias = f"{name}.bias"
    if bias in params:
        y = y + params[bias]
    return y


def positional_encoding(slen: int, d: int) -> np.ndarray:
    """W_pos[t, 2i] = sin(t / 10000^(2i/d)), W_pos[t, 2i+1] = cos(same)."""
    position = np.arange(slen, dtype=np.float64)[:, None]
    div_term = np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
    angles = position / div_term
    pos = np.zeros((slen, d), dtype=np.float64)
    pos[:, 0::2] = np.sin(angles)
    pos[:, 1::2] = np.cos(angles[:, : d // 2])
    return pos


def causal_mask(slen: int) -> np.ndarray:
    """Additive mask: 0 where the key position t' <= t, -inf for future positions."""
    return np.triu(np.full((slen, slen), -np.inf), k=1)


def padding_mask(mask: np.ndarray | None) -> np.ndarray | None:
    """Boolean (b, t) real-position mask -> additive (b, 1, 1, t) attention mask."""
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        return None
    return np.where(mask, 0.0, -np.inf)[:, None, None, :]


def _split_heads(x: DiffTensor, m: int) -> DiffTensor:
    b, t, d = x.shape
    return x.reshape(b, t, m, d // m).transpose(0, 2, 1, 3)


def _merge_heads(x: DiffTensor) -> DiffTensor:
    b, m, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, m * dk)


def _check_mask(mask: np.ndarray, tq: int, tk: int) -> None:
    if mask.ndim < 2 or mask.shape[-2] not in (1, tq) or mask.shape[-1] not in (1, tk):
        raise ShapeError(f"attention mask shape {mask.shape} does not fit scores ({tq}, {tk})")


def multi_head_attention(
    q_in: DiffTensor,
    k_in: DiffTensor,
    v_in: DiffTensor,
    mask: np.ndarray | None,
    params: ParameterStore,
    name: str,
    m: int,
    return_weights: bool = False,
):
    """softmax(Q_i K_i^T / sqrt(d_k) + mask) V_i per head, heads concatenated then projected."""
    d = q_in.shape[-1]
    if d % m:
        raise ShapeError(f"model dimension {d} is not divisible by {m} heads")
    tq, tk = q_in.shape[1], k_in.shape[1]
    q = _split_heads(linear(q_in, params, f"{name}.q"), m)
    k = _split_heads(linear(k_in, params, f"{name}.k"), m)
    v = _split_heads(linear(v_in, params, f"{name}.v"), m)
    scores = dc.matmul(q, k.transpose()) * (1.0 / np.sqrt(d // m))
    if mask is not None:
        _check_mask(mask, tq, tk)
        scores = scores + mask
    weights = dc.softmax_rows(scores)
    out = linear(_merge_heads(dc.matmul(weights, v)), params, f"{name}.o")
    if return_weights:
        return out, weights.values
    return out


def feed_forward(x: DiffTensor, params: ParameterStore, name: str) -> DiffTensor:
    return linear(dc.elementwise(linear(x, params, f"{name}.ff1"), "relu"), params, f"{name}.ff2")


def _norm(x: DiffTensor, params: ParameterStore, name: str) -> DiffTensor:
    return dc.layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"])


def encoder_block(x, params, name, config: TransformerConfig, mask=None, rng=None) -> DiffTensor:
    attn = multi_head_attention(x, x, x, mask, params, f"{name}.attn", config.m)
    h = _norm(x + dc.dropout(attn, config.dropout, rng), params, f"{name}.norm1")
    ff = feed_forward(h, params, name)
    return _norm(h + dc.dropout(ff, config.dropout, rng), params, f"{name}.norm2")


def decoder_block(y, memory, params, name, config: TransformerConfig, self_mask=None, rng=None) -> DiffTensor:
    sa = multi_head_attention(y, y, y, self_mask, params, f"{name}.self_attn", config.m)
    h1 = _norm(y + dc.dropout(sa, config.dropout, rng), params, f"{name}.norm1")
    ca = multi_head_attention(h1, memory, memory, None, params, f"{name}.cross_attn", config.m)
    h2 = _norm(h1 + dc.dropout(ca, config.dropout, rng), params, f"{name}.norm2")
    ff = feed_forward(h2, params, name)
    return _norm(h2 + dc.dropout(ff, config.dropout, rng), params, f"{name}.norm3")


def _as_batch(x) -> DiffTensor:
    x = dc.as_tensor(x)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeError(f"expected a (batch, slen, v) series batch, got shape {x.shape}")
    return x


# ---------- operations ----------
def embed(x, params: ParameterStore, config: TransformerConfig, prefix: str = "enc") -> DiffTensor:
    """U = X W_e^T + b_e per time step."""
    x = _as_batch(x)
    if x.shape[-1] != config.v:
        raise ShapeError(f"series has {x.shape[-1]} variables, model expects v={config.v}")
    return linear(x, params, f"{prefix}.embed")


def encoder_stack(x, params, config: TransformerConfig, prefix: str = "enc", mask=None, rng=None) -> DiffTensor:
    x = _as_batch(x)
    u = embed(x, params, config, prefix) + positional_encoding(x.shape[1], config.d)
    attn_mask = padding_mask(mask)
    for i in range(config.enc_layers):
        u = encoder_block(u, params, f"{prefix}.layers.{i}", config, attn_mask, rng)
    return u


def encode(x, params: ParameterStore, config: TransformerConfig, mask=None, rng=None) -> EncodedMemory:
    x = _as_batch(x)
    if x.shape[1] != config.slen:
        raise ShapeError(f"series length {x.shape[1]} (with SOS) does not match slen={config.slen}")
    z = encoder_stack(x, params, config, "enc", mask, rng)
    flat = z.reshape(z.shape[0], config.slen * config.d)  # row-major over (time, dimension)
    code = dc.elementwise(linear(flat, params, "bottleneck"), "tanh")
    return EncodedMemory(z_full=z, z_code=code, z_expanded=expand(code, params, config))


def expand(z_code, params: ParameterStore, config: TransformerConfig) -> DiffTensor:
    z = dc.as_tensor(z_code)
    if z.ndim == 1:
        z = z.reshape(1, z.shape[0])
    if z.shape[-1] != config.k:
        raise ShapeError(f"latent code length {z.shape[-1]} does not match k={config.k}")
    return linear(z, params, "expand").reshape(z.shape[0], config.slen, config.d)


def decode(tgt, memory: DiffTensor, params: ParameterStore, config: TransformerConfig, rng=None) -> DiffTensor:
    """Decoder stack over a target prefix (b, t, v) against memory Z''; returns (b, t, v)."""
    tgt = _as_batch(tgt)
    t = tgt.shape[1]
    y = embed(tgt, params, config, "dec") + positional_encoding(t, config.d)
    mask = causal_mask(t)
    for i in range(config.dec_layers):
        y = decoder_block(y, memory, params, f"dec.layers.{i}", config, mask, rng)
    return linear(y, params, "out")


def reconstruct(x, params: ParameterStore, config: TransformerConfig, mask=None, rng=None) -> DiffTensor:
    """Teacher-forced reconstruction. Input carries SOS at row 0; output aligns with x[:, 1:]."""
    x = _as_batch(x)
    memory = encode(x, params, config, mask, rng).z_expanded
    return decode(x[:, :-1, :], memory, params, config, rng)


def _sos_rows(batch: int, config: TransformerConfig) -> DiffTensor:
    return DiffTensor(np.full((batch, 1, config.v), config.sos_value))


def _reached_eos(rows: np.ndarray, config: TransformerConfig) -> np.ndarray:
    return (np.abs(rows - config.eos_value) <= config.eos_tolerance).all(axis=-1)


def generate(
    z_code,
    params: ParameterStore,
    config: TransformerConfig,
    max_len: int | None = None,
    unroll_grad: bool = True,
) -> DiffTensor:
    """Autoregressive decoding from SOS against expand(z_code); returns (b, steps, v) without the SOS row.

    With `config.eos_value` set, decoding stops once every sample has emitted
    an EOS row (see `eos_lengths` to trim each sample).
    """
    if max_len is None:
        max_len = config.slen - 1
    memory = expand(z_code, params, config)
    batch = memory.shape[0]
    seq = _sos_rows(batch, config)
    outputs: list[DiffTensor] = []
    done = np.zeros(batch, dtype=bool)
    for step in range(max_len):
        out = decode(seq, memory, params, config)
        row = out[:, -1:, :]
        finite = np.isfinite(row.values).all(axis=(1, 2))
        if not finite.all():
            raise GenerationDivergedError(step, int(np.argmin(finite)))
        outputs.append(row)
        seq = dc.concat([seq, row if unroll_grad else row.detach()], axis=1)
        if config.eos_value is not None:
            done |= _reached_eos(row.values[:, 0, :], config)
            if done.all():
                logger.debug("all %d samples emitted EOS after %d steps", batch, step + 1)
                break
    return dc.concat(outputs, axis=1)


def eos_lengths(values: np.ndarray, config: TransformerConfig) -> np.ndarray:
    """Per-sample length up to (excluding) the first EOS row; full length when EOS is unset or absent."""
    batch, steps = values.shape[0], values.shape[1]
    lengths = np.full(batch, steps, dtype=int)
    if config.eos_value is None:
        return lengths
    hits = _reached_eos(values, config)
    for i in range(batch):
        where = np.flatnonzero(hits[i])
        if where.size:
            lengths[i] = int(where[0])
    return lengths


class TransformerAutoencoder:
    """Binds a config to its parameters and frames normalized series with the SOS row."""

    kind = "tae"

    def __init__(self, config: TransformerConfig, params: ParameterStore):
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: TransformerConfig, rng: np.random.Generator) -> "TransformerAutoencoder":
        return cls(config, create_params(config, rng))

    @property
    def series_length(self) -> int:
        return self.config.slen - 1

    @property
    def k(self) -> int:
        return self.config.k

    def generator_names(self) -> list[str]:
        return generator_param_names(self.params)

    def with_sos(self, values) -> DiffTensor:
        values = _as_batch(values)
        return dc.concat([_sos_rows(values.shape[0], self.config), values], axis=1)

    def reconstruction(self, values: np.ndarray, mask: np.ndarray | None = None, rng=None) -> DiffTensor:
        """Prediction aligned with `values` (normalized, without SOS)."""
        framed = self.with_sos(values)
        full_mask = None if mask is None else np.concatenate([np.ones((mask.shape[0], 1), bool), mask], axis=1)
        return reconstruct(framed, self.params, self.config, full_mask, rng)

    def encode_series(self, values: np.ndarray, mask: np.ndarray | None = None) -> DiffTensor:
        framed = self.with_sos(values)
        full_mask = None if mask is None else np.concatenate([np.ones((mask.shape[0], 1), bool), mask], axis=1)
        return encode(framed, self.params, self.config, full_mask).z_code

    def decode_prior(self, z, unroll_grad: bool = True) -> DiffTensor:
        return generate(z, self.params, self.config, max_len=self.series_length, unroll_grad=unroll_grad)

    def output_lengths(self, values: np.ndarray) -> np.ndarray:
        return eos_lengths(values, self.config)
