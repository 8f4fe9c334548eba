"""Neural building blocks: embedding, positional encoding, attention, FFN,
layer normalization, dropout, LSTM and the dense output head.

Every layer is a pure function of (input, parameter dict, prefix); parameters
are flat-named Tensors like ``"encoder.msa1.w_q"``. Sequences are batched as
[batch, tokens, features] with exactly one token per geometric parameter, so
tokens == 3 throughout the package.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

SEQ_LEN = 3  # one token each for height H, anchor radius r, edge thickness T
LAYER_NORM_EPS = 1e-5


class ContractError(ValueError):
    """A layer was called outside its input contract."""


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape))


def _rows(bias: Tensor, n: int) -> Tensor:
    """Explicitly tile a [1, d] bias to [n, d] via a ones matmul."""
    return T.matmul(_ones((n, 1)), bias)


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x of shape [.., n, fan_in] and b of shape [1, fan_out]."""
    return T.affine_rows(x, w, b)


def embed(inputs: np.ndarray, params: dict[str, Tensor], prefix: str = "embed") -> Tensor:
    """Map normalized geometric scalars to token vectors.

    Token t is ``inputs[:, t] * w[t] + b[t]`` with learned per-position vectors.

    inputs: [batch, 3] array of normalized (H, r, T) values.
    Returns [batch, 3, d_model].
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != SEQ_LEN:
        raise ContractError(f"embed expects [batch, {SEQ_LEN}] inputs, got {list(inputs.shape)}")
    w = params[f"{prefix}.w"]
    b = params[f"{prefix}.b"]
    scaled = T.row_scale(w, inputs)
    return T.add(scaled, T.tile_batch(b, inputs.shape[0]))


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table: sin at even columns, cos at odd columns.

    entry(pos, 2i)   = sin(pos / 10000^(2i / d_model))
    entry(pos, 2i+1) = cos(pos / 10000^(2i / d_model))
    """
    if d_model % 2 != 0:
        raise ContractError(f"positional encoding needs even d_model, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    table = np.zeros((seq_len, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def add_positional_encoding(x: Tensor) -> Tensor:
    """Add the sinusoidal table to an embedded [batch, tokens, d] sequence."""
    table = Tensor(positional_encoding(x.shape[-2], x.shape[-1]))
    return T.add(x, T.tile_batch(table, x.shape[0]))


def mhsa(x: Tensor, params: dict[str, Tensor], prefix: str, numhead: int,
         return_weights: bool = False):
    """Multi-head self-attention with scaled dot-product heads.

    Full-width projections are split logically into ``numhead`` column blocks
    of width d_model / numhead; per-head outputs are concatenated and passed
    through the output projection. Shape-preserving.
    """
    d_model = x.shape[-1]
    if d_model % numhead != 0:
        raise ContractError(f"d_model {d_model} not divisible by numhead {numhead}")
    d_head = d_model // numhead

    q = _affine(x, params[f"{prefix}.w_q"], params[f"{prefix}.b_q"])
    k = _affine(x, params[f"{prefix}.w_k"], params[f"{prefix}.b_k"])
    v = _affine(x, params[f"{prefix}.w_v"], params[f"{prefix}.b_v"])

    heads = []
    weights = []
    for h in range(numhead):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = T.slice_last(q, lo, hi)
        kh = T.slice_last(k, lo, hi)
        vh = T.slice_last(v, lo, hi)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(d_head))
        attn = T.softmax_rows(scores)
        weights.append(attn.array)
        heads.append(T.matmul(attn, vh))

    out = _affine(T.concat_last(heads), params[f"{prefix}.w_o"], params[f"{prefix}.b_o"])
    if return_weights:
        return out, np.stack(weights, axis=0)
    return out


def ffn(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Position-wise dense(d -> d_ff) -> ReLU -> dense(d_ff -> d)."""
    hidden = T.relu(_affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return _affine(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def layer_norm(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Per-token standardization over features, with learned gain and bias."""
    normed = T.standardize_rows(x, LAYER_NORM_EPS)
    n_rows = x.shape[-2]
    gain = _rows(params[f"{prefix}.gain"], n_rows)
    bias = _rows(params[f"{prefix}.bias"], n_rows)
    if x.ndim == 3:
        gain = T.tile_batch(gain, x.shape[0])
        bias = T.tile_batch(bias, x.shape[0])
    return T.add(T.mul(normed, gain), bias)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability ``rate`` and
    rescales survivors by 1/(1-rate); eval mode returns x unchanged."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs an explicit rng stream")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(mask))


def lstm_forward(x: Tensor, params: dict[str, Tensor], prefix: str,
                 hidden_size: int) -> tuple[Tensor, Tensor]:
    """Single-layer LSTM over the token axis, h0 = c0 = 0.

    Gate pre-activations are packed as [input, forget, candidate, output]
    column blocks of ``w`` [d, 4H], ``u`` [H, 4H] and ``b`` [1, 4H]:

        i = sigmoid(.), f = sigmoid(.), g = tanh(.), o = sigmoid(.)
        c_t = f * c_{t-1} + i * g
        h_t = o * tanh(c_t)

    Returns (final hidden [batch, H], all step states [batch, tokens, H]).
    """
    batch, n_tokens, _ = x.shape
    w = params[f"{prefix}.w"]
    u = params[f"{prefix}.u"]
    b = params[f"{prefix}.b"]
    hs = hidden_size

    h = Tensor(np.zeros((batch, hs)))
    c = Tensor(np.zeros((batch, hs)))
    states = []
    for step in range(n_tokens):
        xt = T.token_at(x, step)
        z = T.add(T.add(T.matmul(xt, w), T.matmul(h, u)), _rows(b, batch))
        i = T.sigmoid(T.slice_last(z, 0, hs))
        f = T.sigmoid(T.slice_last(z, hs, 2 * hs))
        g = T.tanh(T.slice_last(z, 2 * hs, 3 * hs))
        o = T.sigmoid(T.slice_last(z, 3 * hs, 4 * hs))
        c = T.add(T.mul(f, c), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        states.append(h)
    return h, T.stack_tokens(states)


def dense_head(h: Tensor, params: dict[str, Tensor], prefix: str = "head") -> Tensor:
    """Affine map to the output space; no activation (standardized regression)."""
    return _affine(h, params[f"{prefix}.w"], params[f"{prefix}.b"])
