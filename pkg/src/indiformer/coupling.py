"""Reversible feature decoupling: affine split-coupling layers over the
feature dimension with exact triangular log-det Jacobians and an optional
Gaussian maximum-likelihood objective.

One layer leaves half the features unchanged and transforms the other
half conditioned on them:

    y_keep = x_keep
    y_move = x_move * exp(s(x_keep)) + t(x_keep)

with s, t two-layer fully connected conditioners (tanh hidden, width
N/2).  The scale output is squashed, s = s_cap * tanh(raw), so exp(s)
stays bounded during training.  Layers alternate which half is kept.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .numerics import (
    Parameter,
    Tensor,
    add,
    assert_finite,
    concat,
    exp,
    matmul,
    mean,
    mul,
    narrow,
    neg,
    reshape,
    sub,
    tanh,
    tensor_sum,
)

LN_2PI = math.log(2.0 * math.pi)


class _Conditioner:
    """Two-layer map half_dim -> half_dim with tanh hidden activation."""

    def __init__(self, name: str, half_dim: int, rng: np.random.Generator,
                 identity_init: bool):
        h = half_dim
        scale = 1.0 / math.sqrt(h)
        w2 = np.zeros((h, h)) if identity_init else rng.normal(0.0, scale, (h, h))
        self.w1 = Parameter(f"{name}.w1", rng.normal(0.0, scale, (h, h)))
        self.b1 = Parameter(f"{name}.b1", np.zeros(h))
        self.w2 = Parameter(f"{name}.w2", w2)
        self.b2 = Parameter(f"{name}.b2", np.zeros(h))

    def __call__(self, x: Tensor) -> Tensor:
        h = tanh(add(matmul(self.w1.tensor, x), reshape(self.b1.tensor, (-1, 1))))
        return add(matmul(self.w2.tensor, h), reshape(self.b2.tensor, (-1, 1)))

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


class CouplingLayer:
    """One invertible split transform over an even feature dimension."""

    def __init__(self, feature_dim: int, rng: np.random.Generator,
                 flip: bool = False, name: str = "coupling",
                 s_cap: float = 2.0, identity_init: bool = True):
        if feature_dim % 2 != 0 or feature_dim < 2:
            raise ConfigurationError(
                f"coupling needs an even feature dimension >= 2, got {feature_dim}")
        self.feature_dim = feature_dim
        self.flip = flip
        self.s_cap = s_cap
        self.scale_net = _Conditioner(f"{name}.scale", feature_dim // 2, rng, identity_init)
        self.shift_net = _Conditioner(f"{name}.shift", feature_dim // 2, rng, identity_init)

    def parameters(self) -> list[Parameter]:
        return self.scale_net.parameters() + self.shift_net.parameters()

    def _halves(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.feature_dim // 2
        return narrow(x, 0, 0, h), narrow(x, 0, h, h)

    def _condition(self, keep: Tensor) -> tuple[Tensor, Tensor]:
        s = mul(tanh(self.scale_net(keep)), self.s_cap)
        t = self.shift_net(keep)
        return s, t

    def _check(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[0] != self.feature_dim:
            raise ConfigurationError(
                f"expected [{self.feature_dim} x T] input, got {x.shape}")

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (y, per-column log-det of the forward Jacobian)."""
        self._check(x)
        first, second = self._halves(x)
        keep, move = (second, first) if self.flip else (first, second)
        s, t = self._condition(keep)
        moved = add(mul(move, exp(s)), t)
        y = concat([moved, keep] if self.flip else [keep, moved], axis=0)
        assert_finite(y, "coupling.forward")
        return y, tensor_sum(s, axis=0)

    def inverse(self, y: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (x, per-column log-det of the inverse Jacobian)."""
        self._check(y)
        first, second = self._halves(y)
        keep, moved = (second, first) if self.flip else (first, second)
        s, t = self._condition(keep)
        move = mul(sub(moved, t), exp(neg(s)))
        x = concat([move, keep] if self.flip else [keep, move], axis=0)
        assert_finite(x, "coupling.inverse")
        return x, neg(tensor_sum(s, axis=0))


class CouplingStack:
    """Composition of coupling layers with alternating kept halves."""

    def __init__(self, feature_dim: int, rng: np.random.Generator,
                 num_layers: int = 2, name: str = "coupling",
                 identity_init: bool = True):
        if num_layers < 2:
            raise ConfigurationError(
                "a coupling stack needs >= 2 layers so both halves are transformed")
        self.feature_dim = feature_dim
        self.layers = [
            CouplingLayer(feature_dim, rng, flip=(i % 2 == 1),
                          name=f"{name}.layer{i}", identity_init=identity_init)
            for i in range(num_layers)
        ]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        total = None
        for layer in self.layers:
            x, ld = layer.forward(x)
            total = ld if total is None else add(total, ld)
        return x, total

    def inverse(self, y: Tensor) -> tuple[Tensor, Tensor]:
        total = None
        for layer in reversed(self.layers):
            y, ld = layer.inverse(y)
            total = ld if total is None else add(total, ld)
        return y, total

    def sample(self, z: Tensor) -> Tensor:
        """Latent -> data direction (test surface only)."""
        return self.forward(z)[0]


def log_det_jacobian(stack: CouplingStack, x: Tensor) -> Tensor:
    """Per-column log|det| of the stack's forward Jacobian at x."""
    return stack.forward(x)[1]


def negative_log_likelihood(stack: CouplingStack, x: Tensor) -> Tensor:
    """Mean over columns of -log p(x) under a standard normal prior pushed
    through the stack: -log pi(z) - log|det J_inverse|, z = inverse(x)."""
    if x.ndim != 2 or x.shape[1] < 1:
        raise InvalidInputError(f"need a non-empty [N x B] batch of columns, got {x.shape}")
    z, ld_inv = stack.inverse(x)
    half_sq = mul(tensor_sum(mul(z, z), axis=0), 0.5)
    per_col = sub(half_sq, ld_inv)
    nll = add(mean(per_col), 0.5 * stack.feature_dim * LN_2PI)
    assert_finite(nll, "coupling.nll")
    return nll
