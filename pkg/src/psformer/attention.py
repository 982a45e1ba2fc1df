"""Shared transformer block: QKV projection, scaled dot-product attention,
residual feed-forward output.

Single-head, no positional encoding, no layer normalization. Positions enter
upstream as relative coordinates appended to grouped features; normalization
is the separate feature-norm stage. Works on (S, d_in) sets or batched
(..., S, d_in) stacks of independent sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, relu, softmax


@dataclass
class TransParams:
    w_q: Tensor   # (d_in, d)
    w_k: Tensor   # (d_in, d)
    w_v: Tensor   # (d_in, d)
    ffn_w1: Tensor  # (d, 2d)
    ffn_b1: Tensor  # (2d,)
    ffn_w2: Tensor  # (2d, d_in)
    ffn_b2: Tensor  # (d_in,)

    @property
    def d_in(self) -> int:
        return self.w_q.shape[0]

    @property
    def d(self) -> int:
        return self.w_q.shape[1]

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.wq": self.w_q, f"{prefix}.wk": self.w_k, f"{prefix}.wv": self.w_v,
            f"{prefix}.ffn_w1": self.ffn_w1, f"{prefix}.ffn_b1": self.ffn_b1,
            f"{prefix}.ffn_w2": self.ffn_w2, f"{prefix}.ffn_b2": self.ffn_b2,
        }


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def init_trans(rng: np.random.Generator, d_in: int, d: int | None = None) -> TransParams:
    """Fresh parameters; key/value width d defaults to d_in.

    The hidden bias starts slightly off zero: normalized group features place
    each centroid's own entry exactly at the beta vector, and with beta and
    ffn_b1 both zero the hidden ReLU would sit exactly on its kink, where
    finite-difference gradient checks are ill-defined.
    """
    if d is None:
        d = d_in
    return TransParams(
        w_q=glorot(rng, d_in, d),
        w_k=glorot(rng, d_in, d),
        w_v=glorot(rng, d_in, d),
        ffn_w1=glorot(rng, d, 2 * d),
        ffn_b1=Tensor(rng.uniform(-0.1, 0.1, size=2 * d), requires_grad=True),
        ffn_w2=glorot(rng, 2 * d, d_in),
        ffn_b2=Tensor(np.zeros(d_in), requires_grad=True),
    )


def project_qkv(f, params: TransParams):
    f = as_tensor(f)
    if f.shape[-1] != params.d_in:
        raise ShapeError(
            f"project_qkv: features have width {f.shape[-1]}, params expect {params.d_in}")
    return f @ params.w_q, f @ params.w_k, f @ params.w_v


def attend(q, k, v) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d)) V, softmax over keys. Every element of a set
    attends over all S elements of that set."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    logits = (q @ k.mT) * Tensor(1.0 / math.sqrt(d))
    return softmax(logits, axis=-1) @ v


def ffn(y, params: TransParams) -> Tensor:
    h = relu(y @ params.ffn_w1 + params.ffn_b1)
    return h @ params.ffn_w2 + params.ffn_b2


def trans_block(f, params: TransParams) -> Tensor:
    """F + FFN(attend(QKV(F))). The residual passes F through exactly when
    the FFN output is zero."""
    f = as_tensor(f)
    q, k, v = project_qkv(f, params)
    return f + ffn(attend(q, k, v), params)
