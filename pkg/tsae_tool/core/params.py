from __future__ import annotations

import logging
from typing import Iterable, Iterator

import numpy as np

from tsae_tool.config import OptimizerConfig
from tsae_tool.core.diffcore import DiffTensor, parameter
from tsae_tool.errors import ContractError, ShapeError

logger = logging.getLogger(__name__)

ROLES = ("weight", "bias", "gain")


class ParameterStore:
    """Ordered name -> DiffTensor map plus the optimizer moment buffers for those tensors.

    `subset()` shares the tensors but starts its own optimizer state, which is
    how the generator phase gets an optimizer separate from the autoencoder's.
    """

    def __init__(self):
        self._params: dict[str, DiffTensor] = {}
        self.roles: dict[str, str] = {}
        self.state: dict[str, dict[str, np.ndarray]] = {}
        self.step_count = 0

    def add(self, name: str, shape: tuple[int, ...], role: str = "weight") -> DiffTensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        if role not in ROLES:
            raise ContractError(f"unknown parameter role {role!r}")
        fill = np.ones if role == "gain" else np.zeros
        t = parameter(fill(shape, dtype=np.float64), name=name)
        self._params[name] = t
        self.roles[name] = role
        return t

    def __getitem__(self, name: str) -> DiffTensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def subset(self, names: Iterable[str]) -> "ParameterStore":
        sub = ParameterStore()
        for name in names:
            sub._params[name] = self._params[name]
            sub.roles[name] = self.roles[name]
        return sub

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = [n for n in self._params if n not in values]
        if missing:
            raise ContractError(f"missing parameter values for {missing}")
        for name, t in self._params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape} does not match {t.shape}")
            t.values[...] = arr

    def load_state(self, state: dict[str, dict[str, np.ndarray]], step_count: int) -> None:
        for name, buffers in state.items():
            if name not in self._params:
                raise ContractError(f"optimizer state for unknown parameter {name!r}")
            for key, buf in buffers.items():
                if buf.shape != self._params[name].shape:
                    raise ShapeError(f"optimizer buffer {name}/{key} has shape {buf.shape}")
        self.state = {n: {k: b.copy() for k, b in bufs.items()} for n, bufs in state.items()}
        self.step_count = int(step_count)


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[1], shape[0]
    if len(shape) == 3:
        receptive = shape[2]
        return shape[1] * receptive, shape[0] * receptive
    size = int(np.prod(shape))
    return size, size


def _reset_non_weights(store: ParameterStore) -> None:
    for name, t in store.items():
        role = store.roles[name]
        if role == "bias":
            t.values[...] = 0.0
        elif role == "gain":
            t.values[...] = 1.0


def init_xavier(store: ParameterStore, rng: np.random.Generator) -> None:
    """Weights ~ U(+-sqrt(6 / (fan_in + fan_out))); biases 0; layer-norm gains 1."""
    for name, t in store.items():
        if store.roles[name] != "weight":
            continue
        fan_in, fan_out = _fans(t.shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        t.values[...] = rng.uniform(-bound, bound, size=t.shape)
    _reset_non_weights(store)


def init_normal(store: ParameterStore, stddev: float, rng: np.random.Generator) -> None:
    if not stddev > 0:
        raise ContractError(f"stddev must be > 0, got {stddev}")
    for name, t in store.items():
        if store.roles[name] == "weight":
            t.values[...] = rng.normal(0.0, stddev, size=t.shape)
    _reset_non_weights(store)


def optimizer_step(store: ParameterStore, config: OptimizerConfig) -> None:
    """One Adam or RMSprop update in place, then zeroes the gradients."""
    missing = [name for name, t in store.items() if t.grad is None]
    if missing:
        raise ContractError(f"optimizer_step without gradients for {missing[:5]}{'...' if len(missing) > 5 else ''}")

    store.step_count += 1
    t_step = store.step_count
    lr = config.learning_rate
    for name, t in store.items():
        g = t.grad
        buffers = store.state.setdefault(name, {})
        if config.kind == "adam":
            m = buffers.setdefault("m", np.zeros_like(t.values))
            v = buffers.setdefault("v", np.zeros_like(t.values))
            m *= config.beta1
            m += (1.0 - config.beta1) * g
            v *= config.beta2
            v += (1.0 - config.beta2) * g * g
            m_hat = m / (1.0 - config.beta1**t_step)
            v_hat = v / (1.0 - config.beta2**t_step)
            t.values -= lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
        elif config.kind == "rmsprop":
            sq = buffers.setdefault("sq", np.zeros_like(t.values))
            sq *= config.rmsprop_decay
            sq += (1.0 - config.rmsprop_decay) * g * g
            update = lr * g / (np.sqrt(sq) + config.epsilon)
            if config.momentum > 0:
                buf = buffers.setdefault("momentum", np.zeros_like(t.values))
                buf *= config.momentum
                buf += update
                update = buf
            t.values -= update
        else:
            raise ContractError(f"unknown optimizer kind {config.kind!r}")
    store.zero_grad()


def clip_weights(store: ParameterStore, bound: float) -> None:
    if not bound > 0:
        raise ContractError(f"clip bound must be > 0, got {bound}")
    for _name, t in store.items():
        np.clip(t.values, -bound, bound, out=t.values)
