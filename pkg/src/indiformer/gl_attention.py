"""GL-Transformer block: grouped local attention (causal conv Q/K/V) and
strided global attention (width-1 conv Q/K/V), fused per position by a
sigmoid gate, wrapped in the usual residual + layer-norm + feed-forward
sandwich so stacks of blocks stay trainable.

All entry points accept [d x T] sequences or batched [B x d x T]
stacks of sequences and preserve the layout they were given.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .numerics import (
    Parameter,
    Tensor,
    add,
    assert_finite,
    bmm,
    concat,
    conv1d,
    dropout,
    layer_norm,
    linear_rows,
    mul,
    narrow,
    relu,
    repeat_axis,
    reshape,
    sigmoid,
    softmax,
    transpose,
)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise DimensionError(f"expected [d x T] or [B x d x T], got {x.shape}")


def _debatch(x: Tensor, squeeze: bool) -> Tensor:
    return reshape(x, x.shape[1:]) if squeeze else x


def _split_heads(rows: Tensor, n_head: int) -> Tensor:
    """[B x T x d] -> [B x h x T x d/h]."""
    b, t, d = rows.shape
    return transpose(reshape(rows, (b, t, n_head, d // n_head)), (0, 2, 1, 3))


def _merge_heads(heads: Tensor) -> Tensor:
    """[B x h x T x d/h] -> [B x T x d]."""
    b, h, t, dk = heads.shape
    return reshape(transpose(heads, (0, 2, 1, 3)), (b, t, h * dk))


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, n_head: int,
                     return_weights: bool = False):
    """Multi-head scaled dot-product attention on [.., d, T] operands:
    per head softmax(Q_h^T K_h / sqrt(d_k)) V_h, heads concatenated."""
    qb, squeeze = _batched(q)
    kb, _ = _batched(k)
    vb, _ = _batched(v)
    d = qb.shape[1]
    if kb.shape[1] != d or vb.shape[1] != d or kb.shape[2] != vb.shape[2]:
        raise DimensionError(
            f"attention operand mismatch: Q {q.shape}, K {k.shape}, V {v.shape}")
    if d % n_head != 0:
        raise DimensionError(f"model dim {d} not divisible by {n_head} heads")
    qh = _split_heads(transpose(qb, (0, 2, 1)), n_head)
    kh = _split_heads(transpose(kb, (0, 2, 1)), n_head)
    vh = _split_heads(transpose(vb, (0, 2, 1)), n_head)
    scores = mul(bmm(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(d // n_head))
    weights = softmax(scores, axis=-1)
    out = transpose(_merge_heads(bmm(weights, vh)), (0, 2, 1))
    out = _debatch(out, squeeze)
    if return_weights:
        return out, np.array(weights.data, copy=True)
    return out


class GLTransformerBlock:
    """One dual-branch attention block of width `model_dim`."""

    def __init__(self, model_dim: int, n_head: int, local_kernel: int,
                 global_stride: int, dropout_rate: float,
                 rng: np.random.Generator, name: str = "gl"):
        if model_dim % n_head != 0:
            raise DimensionError(
                f"model dim {model_dim} not divisible by {n_head} heads")
        if local_kernel < 1 or global_stride < 1:
            raise DimensionError("local kernel and global stride must be >= 1")
        d = model_dim
        self.model_dim = d
        self.n_head = n_head
        self.local_kernel = local_kernel
        self.global_stride = global_stride
        self.dropout_rate = dropout_rate

        def init(shape, fan_in):
            return rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)

        self.local_conv = Parameter(f"{name}.local_conv", init((d, d, local_kernel), d * local_kernel))
        self.global_conv = Parameter(f"{name}.global_conv", init((d, d, 1), d))
        self.local_wq = Parameter(f"{name}.local_wq", init((d, d), d))
        self.local_wk = Parameter(f"{name}.local_wk", init((d, d), d))
        self.local_wv = Parameter(f"{name}.local_wv", init((d, d), d))
        self.global_wq = Parameter(f"{name}.global_wq", init((d, d), d))
        self.global_wk = Parameter(f"{name}.global_wk", init((d, d), d))
        self.global_wv = Parameter(f"{name}.global_wv", init((d, d), d))
        self.w_f = Parameter(f"{name}.w_f", init((d, 2 * d), 2 * d))
        self.b_f = Parameter(f"{name}.b_f", np.zeros(d))
        self.ff_w1 = Parameter(f"{name}.ff_w1", init((d, 4 * d), d))
        self.ff_b1 = Parameter(f"{name}.ff_b1", np.zeros(4 * d))
        self.ff_w2 = Parameter(f"{name}.ff_w2", init((4 * d, d), 4 * d))
        self.ff_b2 = Parameter(f"{name}.ff_b2", np.zeros(d))
        self.ln1_gain = Parameter(f"{name}.ln1_gain", np.ones(d))
        self.ln1_bias = Parameter(f"{name}.ln1_bias", np.zeros(d))
        self.ln2_gain = Parameter(f"{name}.ln2_gain", np.ones(d))
        self.ln2_bias = Parameter(f"{name}.ln2_bias", np.zeros(d))

    def parameters(self) -> list[Parameter]:
        return [self.local_conv, self.global_conv,
                self.local_wq, self.local_wk, self.local_wv,
                self.global_wq, self.global_wk, self.global_wv,
                self.w_f, self.b_f,
                self.ff_w1, self.ff_b1, self.ff_w2, self.ff_b2,
                self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias]

    def _project(self, conv_out: Tensor, wq, wk, wv) -> tuple[Tensor, Tensor, Tensor]:
        rows = transpose(conv_out, (0, 2, 1))
        back = lambda r: transpose(r, (0, 2, 1))
        return (back(linear_rows(rows, wq.tensor)),
                back(linear_rows(rows, wk.tensor)),
                back(linear_rows(rows, wv.tensor)))

    def local_qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Causal width-k conv (stride 1) then per-branch projections;
        output lengths equal the input length."""
        xb, squeeze = _batched(x)
        c = conv1d(xb, self.local_conv.tensor, stride=1, padding="causal")
        q, k, v = self._project(c, self.local_wq, self.local_wk, self.local_wv)
        return tuple(_debatch(t, squeeze) for t in (q, k, v))

    def global_qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Width-1 conv with stride s then projections; length ceil(T/s)."""
        xb, squeeze = _batched(x)
        c = conv1d(xb, self.global_conv.tensor, stride=self.global_stride,
                   padding="causal")
        q, k, v = self._project(c, self.global_wq, self.global_wk, self.global_wv)
        return tuple(_debatch(t, squeeze) for t in (q, k, v))

    def fuse(self, a_local: Tensor, a_global: Tensor) -> Tensor:
        """sigmoid(W_f [A_local; A_global_upsampled] + b_f) per position.

        The global branch is upsampled by repeating each column
        global_stride times, truncated to the local length."""
        al, squeeze = _batched(a_local)
        ag, _ = _batched(a_global)
        t = al.shape[2]
        expect = -(-t // self.global_stride)
        if ag.shape[2] != expect:
            raise DimensionError(
                f"global branch length {ag.shape[2]}, expected ceil({t}/{self.global_stride}) = {expect}")
        up = repeat_axis(ag, self.global_stride, 2)
        if up.shape[2] > t:
            up = narrow(up, 2, 0, t)
        both = transpose(concat([al, up], axis=1), (0, 2, 1))
        gated = sigmoid(add(linear_rows(both, transpose(self.w_f.tensor, (1, 0))),
                            self.b_f.tensor))
        return _debatch(transpose(gated, (0, 2, 1)), squeeze)

    def _feed_forward(self, x: Tensor) -> Tensor:
        rows = transpose(x, (0, 2, 1))
        hidden = relu(add(linear_rows(rows, self.ff_w1.tensor), self.ff_b1.tensor))
        out = add(linear_rows(hidden, self.ff_w2.tensor), self.ff_b2.tensor)
        return transpose(out, (0, 2, 1))

    def forward(self, x: Tensor, rng: np.random.Generator | None = None,
                training: bool = False) -> Tensor:
        """Fused-attention sublayer then feed-forward, each wrapped in
        residual + layer norm; shape is preserved."""
        xb, squeeze = _batched(x)
        a_local = scaled_attention(*self.local_qkv(xb), self.n_head)
        a_global = scaled_attention(*self.global_qkv(xb), self.n_head)
        fused = self.fuse(a_local, a_global)
        y1 = layer_norm(add(xb, dropout(fused, self.dropout_rate, rng, training)),
                        self.ln1_gain.tensor, self.ln1_bias.tensor, axis=1)
        ff = self._feed_forward(y1)
        y = layer_norm(add(y1, dropout(ff, self.dropout_rate, rng, training)),
                       self.ln2_gain.tensor, self.ln2_bias.tensor, axis=1)
        assert_finite(y, "gl_block.forward")
        return _debatch(y, squeeze)

    def set_identity_convs(self) -> None:
        """Replace both branch convs with width-1 identity kernels
        (degenerates each branch to standard attention inputs)."""
        d = self.model_dim
        eye = np.eye(d, dtype=self.local_conv.tensor.data.dtype)
        self.local_conv.tensor.data = eye.reshape(d, d, 1).repeat(self.local_kernel, axis=2) * 0
        self.local_conv.tensor.data[:, :, -1] = eye
        self.global_conv.tensor.data = eye.reshape(d, d, 1).copy()
