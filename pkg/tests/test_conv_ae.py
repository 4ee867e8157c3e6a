from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from tsae_tool.config import CaeConfig
from tsae_tool.core import conv_ae as cae
from tsae_tool.core import diffcore as dc
from tsae_tool.core.adversarial import reconstruction_loss
from tsae_tool.errors import ConfigError, ShapeError


def _spread(store, rng):
    # default init is too small for central differences to resolve the deep-layer gradients
    for _, p in store.items():
        scale = 0.1 if p.ndim == 1 else 1.0 / np.sqrt(np.prod(p.shape[1:]))
        p.values[...] = rng.normal(scale=scale, size=p.shape)
    return store


def test_shapes_and_code_range(rng, tiny_cae):
    params = cae.create_params(tiny_cae, rng)
    x = rng.uniform(-1, 1, size=(4, tiny_cae.slen, tiny_cae.v))
    code = cae.cae_encode(x, params, tiny_cae)
    assert code.shape == (4, tiny_cae.k)
    assert np.all(np.abs(code.values) < 1.0)
    assert cae.cae_decode(code, params, tiny_cae).shape == x.shape


def test_variable_concatenation_order():
    x = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)  # (b, slen, v)
    flat = cae.concat_variables(x).values
    np.testing.assert_array_equal(flat[0, 0], [0, 2, 4, 1, 3, 5])
    config = CaeConfig(slen=3, v=2, channel_schedule=(1,), kernel_sizes=(1,), k=1)
    np.testing.assert_array_equal(cae.split_variables(cae.concat_variables(x), config).values, x)


def test_reconstruction_gradients(rng, tiny_cae):
    params = _spread(cae.create_params(tiny_cae, rng), rng)
    x = rng.uniform(-1, 1, size=(2, tiny_cae.slen, tiny_cae.v))

    def loss(p):
        return reconstruction_loss(cae.cae_reconstruct(x, p, tiny_cae), x)

    assert dc.grad_check(loss, params, eps=1e-5) <= 1e-4


def test_decoder_mirrors_encoder(tiny_cae):
    store = cae.build_params(tiny_cae)
    assert store["enc.conv.0.weight"].shape == (2, 1, 5)
    assert store["dec.conv.0.weight"].shape == (4, 8, 3)
    assert store["dec.conv.2.weight"].shape == (1, 2, 5)
    assert set(cae.generator_param_names(store)) == {n for n in store.names() if n.startswith(("expand.", "dec."))}


def test_same_padding_keeps_length():
    assert cae.same_padding(5) == (2, 2)
    assert cae.same_padding(4) == (1, 2)
    assert cae.same_padding(1) == (0, 0)


def test_wrong_input_shape_raises(rng, tiny_cae):
    params = cae.create_params(tiny_cae, rng)
    with pytest.raises(ShapeError):
        cae.cae_encode(rng.normal(size=(1, tiny_cae.slen + 1, tiny_cae.v)), params, tiny_cae)
    with pytest.raises(ShapeError):
        cae.cae_decode(rng.normal(size=(1, tiny_cae.k + 1)), params, tiny_cae)


def test_receptive_field_longer_than_signal_raises(rng):
    config = CaeConfig(slen=2, v=2, channel_schedule=(2, 4), kernel_sizes=(4, 3), k=2)
    params = cae.create_params(config, rng)
    with pytest.raises(ShapeError):
        cae.cae_encode(np.zeros((1, 2, 2)), params, config)


def test_kernel_schedule_must_decrease(tiny_cae):
    with pytest.raises(ConfigError):
        dataclasses.replace(tiny_cae, kernel_sizes=(3, 4, 5)).validate()
    with pytest.raises(ConfigError):
        dataclasses.replace(tiny_cae, channel_schedule=(2, 4)).validate()


def test_wrapper_surface(rng, tiny_cae):
    model = cae.ConvAutoencoder.create(tiny_cae, rng)
    values = rng.uniform(-1, 1, size=(3, model.series_length, tiny_cae.v))
    assert model.reconstruction(values).shape == values.shape
    assert model.encode_series(values).shape == (3, model.k)
    np.testing.assert_array_equal(model.output_lengths(values), [tiny_cae.slen] * 3)
