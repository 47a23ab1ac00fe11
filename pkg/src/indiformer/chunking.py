"""Segmentation and Overlap-Add between long [N x L] sequences and
[N x k x s] chunk tensors (half-overlapping chunks, k = 2*hop).

Overlap regions are averaged by coverage count, which makes
`overlap_add` the exact left-inverse of `segment`.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError, DimensionError
from .numerics import Tensor, coverage_counts, fold, mul, narrow, pad_axis, unfold


@dataclass
class ChunkTensor:
    """Chunked view of a sequence: data [n_features x chunk_len x num_chunks]."""

    data: Tensor
    hop_p: int
    original_len: int

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DimensionError(f"chunk tensor must be rank 3, got {self.data.shape}")
        if self.chunk_len != 2 * self.hop_p:
            raise ConfigurationError(
                f"chunk length {self.chunk_len} must equal 2*hop ({2 * self.hop_p})")
        if self.num_chunks < 1:
            raise ConfigurationError("chunk tensor needs at least one chunk")
        padded = self.chunk_len + (self.num_chunks - 1) * self.hop_p
        if self.original_len > padded:
            raise ConfigurationError(
                f"original length {self.original_len} exceeds padded length {padded}")

    @property
    def n_features(self) -> int:
        return self.data.shape[0]

    @property
    def chunk_len(self) -> int:
        return self.data.shape[1]

    @property
    def num_chunks(self) -> int:
        return self.data.shape[2]


def padded_length(length: int, chunk_size: int, hop: int) -> int:
    """Smallest L' >= max(length, chunk_size) with (L' - chunk_size) % hop == 0."""
    if length <= chunk_size:
        return chunk_size
    return chunk_size + -(-(length - chunk_size) // hop) * hop


def segment(seq: Tensor, chunk_size: int, hop: int) -> ChunkTensor:
    """Chop [N x L] into half-overlapping chunks of length chunk_size.

    The sequence is right-padded with zeros so chunks tile it exactly;
    chunk i covers columns [i*hop, i*hop + chunk_size).
    """
    if chunk_size != 2 * hop:
        raise ConfigurationError(
            f"chunk size {chunk_size} must equal 2*hop ({2 * hop})")
    if seq.ndim != 2:
        raise DimensionError(f"segment expects a rank-2 sequence, got {seq.shape}")
    n, length = seq.shape
    if length < 1:
        raise DimensionError("segment needs a non-empty sequence")
    target = padded_length(length, chunk_size, hop)
    if target > length:
        seq = pad_axis(seq, 1, 0, target - length)
    data = unfold(seq, chunk_size, hop)
    return ChunkTensor(data=data, hop_p=hop, original_len=length)


def overlap_add(ct: ChunkTensor) -> Tensor:
    """Reassemble [N x original_len]: chunks added at offsets i*hop, every
    position divided by its coverage count, padding truncated."""
    k, s, p = ct.chunk_len, ct.num_chunks, ct.hop_p
    padded = (s - 1) * p + k
    summed = fold(ct.data, p, padded)
    cov = coverage_counts(k, p, s)
    averaged = mul(summed, (1.0 / cov).astype(summed.data.dtype))
    if ct.original_len < padded:
        averaged = narrow(averaged, 1, 0, ct.original_len)
    return averaged
