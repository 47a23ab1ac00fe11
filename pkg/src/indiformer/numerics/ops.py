"""Differentiable operations on Tensor.

Shape conventions follow the rest of the package: feature-major
matrices [d x T], optional leading batch axis, kernels
[out_ch x in_ch x width].  Every op returns a new Tensor whose backward
closure scatters the output gradient to its parents.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .tensor import Tensor, as_tensor

LN10 = math.log(10.0)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _split(a, b):
    """Normalize a binary op's operands; non-Tensors become constants."""
    at = a if isinstance(a, Tensor) else None
    bt = b if isinstance(b, Tensor) else None
    if at is None and bt is None:
        raise TypeError("at least one operand must be a Tensor")
    dtype = (at or bt).data.dtype
    a_arr = at.data if at is not None else np.asarray(a, dtype=dtype)
    b_arr = bt.data if bt is not None else np.asarray(b, dtype=dtype)
    return at, a_arr, bt, b_arr


# -- arithmetic ---------------------------------------------------------------

def add(a, b) -> Tensor:
    at, a_arr, bt, b_arr = _split(a, b)

    def backward(g):
        if at is not None:
            at.accumulate_grad(_unbroadcast(g, a_arr.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(g, b_arr.shape))

    return Tensor.make_node(a_arr + b_arr, tuple(t for t in (at, bt) if t), backward)


def sub(a, b) -> Tensor:
    at, a_arr, bt, b_arr = _split(a, b)

    def backward(g):
        if at is not None:
            at.accumulate_grad(_unbroadcast(g, a_arr.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(-g, b_arr.shape))

    return Tensor.make_node(a_arr - b_arr, tuple(t for t in (at, bt) if t), backward)


def mul(a, b) -> Tensor:
    at, a_arr, bt, b_arr = _split(a, b)

    def backward(g):
        if at is not None:
            at.accumulate_grad(_unbroadcast(g * b_arr, a_arr.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(g * a_arr, b_arr.shape))

    return Tensor.make_node(a_arr * b_arr, tuple(t for t in (at, bt) if t), backward)


def div(a, b) -> Tensor:
    at, a_arr, bt, b_arr = _split(a, b)

    def backward(g):
        if at is not None:
            at.accumulate_grad(_unbroadcast(g / b_arr, a_arr.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(-g * a_arr / (b_arr * b_arr), b_arr.shape))

    return Tensor.make_node(a_arr / b_arr, tuple(t for t in (at, bt) if t), backward)


def neg(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate_grad(-g)

    return Tensor.make_node(-x.data, (x,), backward)


def power(x: Tensor, exponent: float) -> Tensor:
    """x ** exponent for a scalar exponent (x > 0 for fractional exponents)."""
    p = float(exponent)
    data = x.data ** p

    def backward(g):
        x.accumulate_grad(g * p * x.data ** (p - 1.0))

    return Tensor.make_node(data, (x,), backward)


# -- elementwise nonlinearities ----------------------------------------------

def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def backward(g):
        x.accumulate_grad(g * y)

    return Tensor.make_node(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate_grad(g / x.data)

    return Tensor.make_node(np.log(x.data), (x,), backward)


def log10(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate_grad(g / (x.data * LN10))

    return Tensor.make_node(np.log10(x.data), (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x.accumulate_grad(g * (1.0 - y * y))

    return Tensor.make_node(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def backward(g):
        x.accumulate_grad(g * (x.data > 0))

    return Tensor.make_node(y, (x,), backward)


def sigmoid(x) -> Tensor:
    """Elementwise logistic; exp(-|x|) keeps it overflow-free."""
    x = as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        x.accumulate_grad(g * y * (1.0 - y))

    return Tensor.make_node(y, (x,), backward)


def softmax(x, axis: int) -> Tensor:
    """Max-shifted softmax along `axis`; output sums to 1 along that axis."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        x.accumulate_grad(y * (g - dot))

    return Tensor.make_node(y, (x,), backward)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first operand."""
    at, a_arr, bt, b_arr = _split(a, b)
    take_a = a_arr >= b_arr

    def backward(g):
        if at is not None:
            at.accumulate_grad(_unbroadcast(g * take_a, a_arr.shape))
        if bt is not None:
            bt.accumulate_grad(_unbroadcast(g * ~take_a, b_arr.shape))

    return Tensor.make_node(np.where(take_a, a_arr, b_arr),
                            tuple(t for t in (at, bt) if t), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        x.accumulate_grad(g * inside)

    return Tensor.make_node(np.clip(x.data, lo, hi), (x,), backward)


# -- reductions ----------------------------------------------------------------

def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g, x.shape).copy())
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            x.accumulate_grad(np.broadcast_to(g, x.shape).copy())

    return Tensor.make_node(np.asarray(data), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    data = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g / count, x.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x.accumulate_grad(np.broadcast_to(gg / count, x.shape).copy())

    return Tensor.make_node(np.asarray(data), (x,), backward)


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product; raises DimensionError naming both shapes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def backward(g):
        a.accumulate_grad(g @ b.data.T)
        b.accumulate_grad(a.data.T @ g)

    return Tensor.make_node(a.data @ b.data, (a, b), backward)


def linear_rows(x: Tensor, w: Tensor) -> Tensor:
    """Apply a [d_in x d_out] matrix to the last axis of x ([..., T, d_in])."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear_rows shape mismatch: {x.shape} x {w.shape}")

    def backward(g):
        x.accumulate_grad(g @ w.data.T)
        if w.requires_grad:
            w.accumulate_grad(x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1]))

    return Tensor.make_node(x.data @ w.data, (x, w), backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over matching leading axes (ranks 3 or 4)."""
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise DimensionError(f"bmm expects equal ranks 3 or 4, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"bmm shape mismatch: {a.shape} x {b.shape}")

    def backward(g):
        a.accumulate_grad(g @ np.swapaxes(b.data, -1, -2))
        b.accumulate_grad(np.swapaxes(a.data, -1, -2) @ g)

    return Tensor.make_node(a.data @ b.data, (a, b), backward)


# -- shape manipulation ----------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        x.accumulate_grad(g.reshape(x.shape))

    return Tensor.make_node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        x.accumulate_grad(g.transpose(inv))

    return Tensor.make_node(x.data.transpose(axes), (x,), backward)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, cuts, axis=axis)):
            p.accumulate_grad(piece)

    return Tensor.make_node(np.concatenate([p.data for p in parts], axis=axis),
                            tuple(parts), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice [start, start+length) along `axis`."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        buf = np.zeros(x.shape, dtype=x.data.dtype)
        buf[idx] = g
        x.accumulate_grad(buf)

    return Tensor.make_node(x.data[idx], (x,), backward)


def pad_axis(x: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad along one axis."""
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(before, before + x.shape[axis])
    idx = tuple(idx)

    def backward(g):
        x.accumulate_grad(g[idx])

    return Tensor.make_node(np.pad(x.data, widths), (x,), backward)


def repeat_axis(x: Tensor, repeats: int, axis: int) -> Tensor:
    """Repeat each slice `repeats` times consecutively along `axis`."""
    n = x.shape[axis]
    axis = axis % x.ndim

    def backward(g):
        shape = g.shape[:axis] + (n, repeats) + g.shape[axis + 1:]
        x.accumulate_grad(g.reshape(shape).sum(axis=axis + 1))

    return Tensor.make_node(np.repeat(x.data, repeats, axis=axis), (x,), backward)


# -- windowing (segmentation / overlap-add kernels) -------------------------------

def unfold(x: Tensor, size: int, hop: int) -> Tensor:
    """[..., L] -> [..., size, n] windows at offsets i*hop; requires exact tiling."""
    L = x.shape[-1]
    if L < size or (L - size) % hop != 0:
        raise DimensionError(
            f"unfold needs (L - size) divisible by hop, got L={L}, size={size}, hop={hop}")
    n = (L - size) // hop + 1
    win = sliding_window_view(x.data, size, axis=-1)[..., ::hop, :]
    data = np.ascontiguousarray(np.swapaxes(win, -1, -2))

    def backward(g):
        buf = np.zeros(x.shape, dtype=x.data.dtype)
        for w in range(size):
            buf[..., w: w + hop * n: hop] += g[..., w, :]
        x.accumulate_grad(buf)

    return Tensor.make_node(data, (x,), backward)


def fold(x: Tensor, hop: int, out_len: int) -> Tensor:
    """[..., size, n] -> [..., out_len]: add window w of chunk i at i*hop + w."""
    size, n = x.shape[-2], x.shape[-1]
    if out_len != (n - 1) * hop + size:
        raise DimensionError(
            f"fold output length {out_len} != (n-1)*hop + size = {(n - 1) * hop + size}")
    data = np.zeros(x.shape[:-2] + (out_len,), dtype=x.data.dtype)
    for w in range(size):
        data[..., w: w + hop * n: hop] += x.data[..., w, :]

    def backward(g):
        gw = sliding_window_view(g, size, axis=-1)[..., ::hop, :]
        x.accumulate_grad(np.ascontiguousarray(np.swapaxes(gw, -1, -2)))

    return Tensor.make_node(data, (x,), backward)


def coverage_counts(size: int, hop: int, n: int) -> np.ndarray:
    """How many windows cover each position of a folded length-((n-1)*hop+size) axis."""
    cov = np.zeros((n - 1) * hop + size)
    for i in range(n):
        cov[i * hop: i * hop + size] += 1.0
    return cov


# -- convolutions ------------------------------------------------------------------

def conv1d(x: Tensor, kernels: Tensor, stride: int = 1, padding: str = "causal") -> Tensor:
    """1-D correlation.

    x: [C_in x L] or [B x C_in x L]; kernels: [C_out x C_in x W].
    padding "causal" left-pads W-1 zeros (stride-1 output length == L);
    padding "none" requires L >= W.
    """
    if padding not in ("causal", "none"):
        raise ValueError(f"unknown padding {padding!r}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    squeeze = x.ndim == 2
    if squeeze:
        x3 = reshape(x, (1,) + x.shape)
    elif x.ndim == 3:
        x3 = x
    else:
        raise DimensionError(f"conv1d input must be rank 2 or 3, got {x.shape}")
    if kernels.ndim != 3 or kernels.shape[1] != x3.shape[1]:
        raise DimensionError(
            f"conv1d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    W = kernels.shape[2]
    L = x3.shape[2]
    L_pad = L + (W - 1 if padding == "causal" else 0)
    if W > L_pad:
        raise DimensionError(f"conv1d kernel width {W} exceeds padded length {L_pad}")
    xp = pad_axis(x3, 2, W - 1, 0) if padding == "causal" else x3
    n_out = (L_pad - W) // stride + 1

    def forward_node(xp_t: Tensor) -> Tensor:
        B, C = xp_t.shape[0], xp_t.shape[1]
        win = sliding_window_view(xp_t.data, W, axis=-1)[:, :, ::stride, :]  # [B,C,n,W]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, n_out, C * W)
        kmat = kernels.data.reshape(kernels.shape[0], C * W)
        out = np.ascontiguousarray((cols @ kmat.T).transpose(0, 2, 1))  # [B,O,n]

        def backward(g):
            g_rows = np.ascontiguousarray(g.transpose(0, 2, 1))  # [B,n,O]
            if kernels.requires_grad:
                gk = g_rows.reshape(-1, kernels.shape[0]).T @ cols.reshape(-1, C * W)
                kernels.accumulate_grad(gk.reshape(kernels.shape))
            if xp_t.requires_grad:
                gcols = (g_rows @ kmat).reshape(B, n_out, C, W).transpose(0, 2, 1, 3)
                buf = np.zeros(xp_t.shape, dtype=xp_t.data.dtype)
                for w in range(W):
                    buf[:, :, w: w + stride * n_out: stride] += gcols[:, :, :, w]
                xp_t.accumulate_grad(buf)

        return Tensor.make_node(out, (xp_t, kernels), backward)

    out = forward_node(xp)
    return reshape(out, out.shape[1:]) if squeeze else out


def conv_transpose1d(x: Tensor, kernels: Tensor, stride: int) -> Tensor:
    """Transposed 1-D conv (adjoint of conv1d without padding).

    x: [C_in x L] or [B x C_in x L]; kernels: [C_in x C_out x W];
    output length (L-1)*stride + W, overlapping contributions summed.
    """
    squeeze = x.ndim == 2
    x3 = reshape(x, (1,) + x.shape) if squeeze else x
    if x3.ndim != 3 or kernels.ndim != 3 or kernels.shape[0] != x3.shape[1]:
        raise DimensionError(
            f"conv_transpose1d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    B, C, L = x3.shape
    _, O, W = kernels.shape
    out_len = (L - 1) * stride + W

    def forward_node(xt: Tensor) -> Tensor:
        kmat = kernels.data.reshape(C, O * W)
        rows = np.ascontiguousarray(xt.data.transpose(0, 2, 1))  # [B,L,C]
        contrib = (rows @ kmat).reshape(B, L, O, W).transpose(0, 2, 1, 3)
        out = np.zeros((B, O, out_len), dtype=xt.data.dtype)
        for w in range(W):
            out[:, :, w: w + stride * L: stride] += contrib[:, :, :, w]

        def backward(g):
            gwin = sliding_window_view(g, W, axis=-1)[:, :, ::stride, :]  # [B,O,L,W]
            grows = np.ascontiguousarray(gwin.transpose(0, 2, 1, 3)).reshape(
                B * L, O * W)
            if xt.requires_grad:
                xt.accumulate_grad(
                    (grows @ kmat.T).reshape(B, L, C).transpose(0, 2, 1))
            if kernels.requires_grad:
                gk = rows.reshape(B * L, C).T @ grows
                kernels.accumulate_grad(gk.reshape(kernels.shape))

        return Tensor.make_node(out, (xt, kernels), backward)

    out = forward_node(x3)
    return reshape(out, out.shape[1:]) if squeeze else out


def conv2d_same(x: Tensor, kernels: Tensor) -> Tensor:
    """Stride-1 2-D correlation with zero 'same' padding (odd kernels).

    x: [C_in x H x W] or [B x C_in x H x W]; kernels: [C_out x C_in x kh x kw].
    """
    squeeze = x.ndim == 3
    x4 = reshape(x, (1,) + x.shape) if squeeze else x
    if x4.ndim != 4 or kernels.ndim != 4 or kernels.shape[1] != x4.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape}, kernels {kernels.shape}")
    kh, kw = kernels.shape[2], kernels.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d_same requires odd kernel sides, got {kh}x{kw}")
    H, Wd = x4.shape[2], x4.shape[3]
    xp = pad_axis(pad_axis(x4, 2, kh // 2, kh // 2), 3, kw // 2, kw // 2)

    def forward_node(xp_t: Tensor) -> Tensor:
        B, C = xp_t.shape[0], xp_t.shape[1]
        O = kernels.shape[0]
        win = sliding_window_view(xp_t.data, (kh, kw), axis=(-2, -1))  # [B,C,H,W,kh,kw]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
            B * H * Wd, C * kh * kw)
        kmat = kernels.data.reshape(O, C * kh * kw)
        out = np.ascontiguousarray(
            (cols @ kmat.T).reshape(B, H, Wd, O).transpose(0, 3, 1, 2))

        def backward(g):
            g_rows = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
            if kernels.requires_grad:
                kernels.accumulate_grad((g_rows.T @ cols).reshape(kernels.shape))
            if xp_t.requires_grad:
                gcols = (g_rows @ kmat).reshape(B, H, Wd, C, kh, kw).transpose(
                    0, 3, 1, 2, 4, 5)
                buf = np.zeros(xp_t.shape, dtype=xp_t.data.dtype)
                for h in range(kh):
                    for w in range(kw):
                        buf[:, :, h: h + H, w: w + Wd] += gcols[:, :, :, :, h, w]
                xp_t.accumulate_grad(buf)

        return Tensor.make_node(out, (xp_t, kernels), backward)

    out = forward_node(xp)
    return reshape(out, out.shape[1:]) if squeeze else out


# -- regularization / normalization ---------------------------------------------

def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout; identity outside training mode."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit generator")
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, mask)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int,
               eps: float = 1e-5) -> Tensor:
    """Normalize along `axis`, then apply a learned per-feature affine."""
    m = mean(x, axis=axis, keepdims=True)
    c = sub(x, m)
    v = mean(mul(c, c), axis=axis, keepdims=True)
    inv = power(add(v, eps), -0.5)
    shape = [1] * x.ndim
    shape[axis] = gain.shape[0]
    return add(mul(mul(c, inv), reshape(gain, shape)), reshape(bias, shape))
