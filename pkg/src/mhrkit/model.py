"""Encoder variants and full model assembly.

Five encoder configurations are supported; all share the same surrounding
pipeline (embedding -> positional encoding -> encoder -> LSTM -> dropout ->
dense head). Dataflow per variant, writing M1/M2 for the attention blocks:

    baseline: y1 = LN1(x + M1(x));  out = LN2(y1 + FFN(y1))
    a:        y1 = x + M1(x);       out = y1 + FFN(y1)
    b:        y1 = M1(x);           out = y1 + FFN(y1)
    c:        y1 = M1(x);           out = y1 + M2(y1)
    d:        y1 = x + M1(x);       out = FFN(y1)

Variant ``c`` is the headline architecture; with ``share_attention`` the M2
parameter paths alias the M1 tensors so the second attention block adds no
storage.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import layers
from . import tensor as T
from .tensor import Tensor

TASKS = ("frequency", "radius")
OUTPUT_DIMS = {"frequency": 6, "radius": 1}
FFN_WIDTH_FACTOR = 4


class ConfigError(ValueError):
    """A model configuration violates one of its invariants."""


class Variant(str, Enum):
    BASELINE = "baseline"
    A = "a"
    B = "b"
    C = "c"
    D = "d"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, Variant):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(
                f"unknown variant {value!r}; expected one of "
                f"{[v.value for v in cls]}"
            ) from None


@dataclass
class ModelConfig:
    task: str
    variant: Variant = Variant.C
    d_model: int = 64
    numhead: int = 4
    numdrop: float = 0.00015
    numlstm: int = 256
    n_encoder_layers: int = 1
    share_attention: bool = True
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be positive and even, got {self.d_model}")
        if self.numhead <= 0 or self.d_model % self.numhead != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by numhead ({self.numhead})"
            )
        if not 0.0 <= self.numdrop < 1.0:
            raise ConfigError(f"numdrop must satisfy 0 <= numdrop < 1, got {self.numdrop}")
        if self.numlstm < 1:
            raise ConfigError(f"numLSTM must be >= 1, got {self.numlstm}")
        if self.n_encoder_layers < 1:
            raise ConfigError(f"n_encoder_layers must be >= 1, got {self.n_encoder_layers}")

    @property
    def out_dim(self) -> int:
        return OUTPUT_DIMS[self.task]


def _attention_paths(prefix: str, d: int) -> dict[str, tuple[int, int]]:
    shapes = {}
    for name in ("q", "k", "v", "o"):
        shapes[f"{prefix}.w_{name}"] = (d, d)
        shapes[f"{prefix}.b_{name}"] = (1, d)
    return shapes


def parameter_layout(cfg: ModelConfig) -> dict[str, tuple[tuple[int, ...], str | None]]:
    """Map parameter path -> (shape, alias target or None), in creation order."""
    d = cfg.d_model
    d_ff = FFN_WIDTH_FACTOR * d
    layout: dict[str, tuple[tuple[int, ...], str | None]] = {
        "embed.w": ((layers.SEQ_LEN, d), None),
        "embed.b": ((layers.SEQ_LEN, d), None),
    }
    for i in range(cfg.n_encoder_layers):
        pre = f"encoder.l{i}"
        for path, shape in _attention_paths(f"{pre}.msa1", d).items():
            layout[path] = (shape, None)
        if cfg.variant is Variant.C:
            for path, shape in _attention_paths(f"{pre}.msa2", d).items():
                alias = path.replace(".msa2.", ".msa1.") if cfg.share_attention else None
                layout[path] = (shape, alias)
        else:
            layout[f"{pre}.ffn.w1"] = ((d, d_ff), None)
            layout[f"{pre}.ffn.b1"] = ((1, d_ff), None)
            layout[f"{pre}.ffn.w2"] = ((d_ff, d), None)
            layout[f"{pre}.ffn.b2"] = ((1, d), None)
        if cfg.variant is Variant.BASELINE:
            for ln in ("ln1", "ln2"):
                layout[f"{pre}.{ln}.gain"] = ((1, d), None)
                layout[f"{pre}.{ln}.bias"] = ((1, d), None)
    layout["lstm.w"] = ((d, 4 * cfg.numlstm), None)
    layout["lstm.u"] = ((cfg.numlstm, 4 * cfg.numlstm), None)
    layout["lstm.b"] = ((1, 4 * cfg.numlstm), None)
    layout["head.w"] = ((cfg.numlstm, cfg.out_dim), None)
    layout["head.b"] = ((1, cfg.out_dim), None)
    return layout


def _init_array(path: str, shape: tuple[int, ...], cfg: ModelConfig,
                rng: np.random.Generator) -> np.ndarray:
    leaf = path.rsplit(".", 1)[-1]
    if leaf == "gain":
        return np.ones(shape)
    if path == "embed.w":
        # scalar inputs: fan_in 1
        return rng.uniform(-1.0, 1.0, size=shape)
    if path == "lstm.b":
        arr = np.zeros(shape)
        arr[0, cfg.numlstm:2 * cfg.numlstm] = 1.0  # forget-gate bias
        return arr
    if leaf.startswith("b"):
        return np.zeros(shape)
    limit = np.sqrt(1.0 / shape[0])
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig) -> dict[str, Tensor]:
    rng = np.random.default_rng(cfg.seed)
    params: dict[str, Tensor] = {}
    for path, (shape, alias) in parameter_layout(cfg).items():
        if alias is not None:
            params[path] = params[alias]
        else:
            params[path] = Tensor(_init_array(path, shape, cfg, rng), requires_grad=True)
    return params


def count_parameters(cfg: ModelConfig) -> tuple[dict[str, int], int]:
    """Per-path scalar counts plus the total; aliased paths count once."""
    layout = parameter_layout(cfg)
    counts = {path: int(np.prod(shape)) for path, (shape, _) in layout.items()}
    total = sum(count for path, count in counts.items() if layout[path][1] is None)
    return counts, total


def encoder_forward(x: Tensor, variant: Variant, params: dict[str, Tensor],
                    prefix: str, numhead: int) -> Tensor:
    m1 = layers.mhsa(x, params, f"{prefix}.msa1", numhead)
    if variant is Variant.BASELINE:
        y1 = layers.layer_norm(T.add(x, m1), params, f"{prefix}.ln1")
        return layers.layer_norm(T.add(y1, layers.ffn(y1, params, f"{prefix}.ffn")),
                                 params, f"{prefix}.ln2")
    if variant is Variant.A:
        y1 = T.add(x, m1)
        return T.add(y1, layers.ffn(y1, params, f"{prefix}.ffn"))
    if variant is Variant.B:
        return T.add(m1, layers.ffn(m1, params, f"{prefix}.ffn"))
    if variant is Variant.C:
        return T.add(m1, layers.mhsa(m1, params, f"{prefix}.msa2", numhead))
    if variant is Variant.D:
        return layers.ffn(T.add(x, m1), params, f"{prefix}.ffn")
    raise ConfigError(f"unknown variant {variant!r}")


class Model:
    """A built network: configuration plus named parameter tensors.

    ``forward`` runs inside whatever Graph is active (recording for training);
    ``predict`` is the eval-mode convenience that never records.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def unique_parameters(self) -> dict[str, Tensor]:
        """Parameters with aliased paths removed (identity-level dedup)."""
        seen: dict[int, str] = {}
        unique = {}
        for path, tensor in self.params.items():
            if id(tensor) in seen:
                continue
            seen[id(tensor)] = path
            unique[path] = tensor
        return unique

    def forward(self, inputs: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        x = layers.embed(np.atleast_2d(inputs), self.params)
        x = layers.add_positional_encoding(x)
        for i in range(cfg.n_encoder_layers):
            x = encoder_forward(x, cfg.variant, self.params, f"encoder.l{i}", cfg.numhead)
        hidden, _ = layers.lstm_forward(x, self.params, "lstm", cfg.numlstm)
        hidden = layers.dropout(hidden, cfg.numdrop, train, rng)
        return layers.dense_head(hidden, self.params)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """Deterministic eval-mode forward on [batch, 3] normalized inputs."""
        return self.forward(inputs, train=False).array

    def attention_weights(self, inputs: np.ndarray) -> dict[str, np.ndarray]:
        """Debug dump of per-block attention matrices for the first layer."""
        cfg = self.config
        x = layers.embed(np.atleast_2d(inputs), self.params)
        x = layers.add_positional_encoding(x)
        out, w1 = layers.mhsa(x, self.params, "encoder.l0.msa1", cfg.numhead,
                              return_weights=True)
        dump = {"msa1": w1}
        if cfg.variant is Variant.C:
            y1 = out
            _, w2 = layers.mhsa(y1, self.params, "encoder.l0.msa2", cfg.numhead,
                                return_weights=True)
            dump["msa2"] = w2
        return dump


def build_model(cfg: ModelConfig) -> Model:
    """Construct a model with freshly initialized, seeded parameters."""
    return Model(cfg, init_params(cfg))
