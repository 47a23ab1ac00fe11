"""End-to-end two-source separator.

Pipeline: conv encoder -> segmentation -> coupling forward -> repeated
{intra-chunk, inter-chunk} GL-Transformer blocks -> coupling inverse ->
2-D conv mask head over the chunk grid -> overlap-add -> sigmoid masks
-> mask * encoded mixture -> transposed-conv decoder, trimmed to the
input length.

Checkpoints are a single file: magic, a JSON manifest of
{parameter name, shape, dtype, byte offset} plus the embedded model
configuration, then a blob of little-endian float32 values.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .chunking import ChunkTensor, overlap_add, segment
from .coupling import CouplingStack
from .errors import CheckpointError, ConfigurationError, DimensionError, InvalidInputError
from .gl_attention import GLTransformerBlock
from .numerics import (
    Parameter,
    Tensor,
    add,
    assert_finite,
    collect_parameters,
    conv1d,
    conv2d_same,
    conv_transpose1d,
    float_dtype,
    mul,
    narrow,
    no_grad,
    pad_axis,
    relu,
    reshape,
    sigmoid,
    transpose,
)
from .signal_io import Waveform

CHECKPOINT_MAGIC = b"IFCK"


@dataclass
class EncoderConfig:
    """TasNet-style front end: 1-D conv bank with ReLU."""

    num_filters: int = 128
    kernel_len: int = 16
    stride: int = 8

    def __post_init__(self):
        if min(self.num_filters, self.kernel_len, self.stride) < 1:
            raise ConfigurationError(f"encoder settings must be positive: {self}")
        if self.stride > self.kernel_len:
            raise ConfigurationError(
                f"encoder stride {self.stride} exceeds kernel length {self.kernel_len}")


@dataclass
class SeparatorConfig:
    n_src: int = 2
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    chunk_size: int = 100
    hop_size: int = 50
    n_repeat: int = 6
    n_head: int = 4
    local_kernel: int = 4
    global_stride: int = 4
    dropout: float = 0.1
    coupling_layers: int = 2
    decoupling_enabled: bool = True

    def __post_init__(self):
        if self.n_src < 2:
            raise ConfigurationError(f"need at least 2 sources, got {self.n_src}")
        if self.chunk_size != 2 * self.hop_size:
            raise ConfigurationError(
                f"chunk size {self.chunk_size} must equal 2*hop ({2 * self.hop_size})")
        if self.encoder.num_filters % 2 != 0:
            raise ConfigurationError("num_filters must be even for the coupling split")
        if self.encoder.num_filters % self.n_head != 0:
            raise ConfigurationError(
                f"num_filters {self.encoder.num_filters} not divisible by "
                f"{self.n_head} heads")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("encoder"))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SeparatorConfig":
        d = dict(d)
        enc = EncoderConfig(num_filters=d.pop("num_filters"),
                            kernel_len=d.pop("kernel_len"),
                            stride=d.pop("stride"))
        return cls(encoder=enc, **d)


class SeparatorModel:
    """Trainable separator; evaluation-mode calls are deterministic and
    safe to run concurrently on one instance."""

    def __init__(self, config: SeparatorConfig, rng: np.random.Generator):
        self.config = config
        self._rng = rng
        enc = config.encoder
        n = enc.num_filters
        self.encoder_weight = Parameter(
            "encoder.weight",
            rng.normal(0.0, 1.0 / math.sqrt(enc.kernel_len), (n, 1, enc.kernel_len)))
        self.decoupler = CouplingStack(n, rng, num_layers=config.coupling_layers,
                                       name="decoupler")
        self.dual_path: list[tuple[GLTransformerBlock, GLTransformerBlock]] = []
        for r in range(config.n_repeat):
            intra = GLTransformerBlock(n, config.n_head, config.local_kernel,
                                       config.global_stride, config.dropout, rng,
                                       name=f"dual{r}.intra")
            inter = GLTransformerBlock(n, config.n_head, config.local_kernel,
                                       config.global_stride, config.dropout, rng,
                                       name=f"dual{r}.inter")
            self.dual_path.append((intra, inter))
        self.mask_weight = Parameter(
            "mask_head.weight",
            rng.normal(0.0, 1.0 / math.sqrt(9 * n), (config.n_src * n, n, 3, 3)))
        self.mask_bias = Parameter("mask_head.bias", np.zeros(config.n_src * n))
        self.decoder_weight = Parameter(
            "decoder.weight",
            rng.normal(0.0, 1.0 / math.sqrt(enc.kernel_len), (n, 1, enc.kernel_len)))

    def parameters(self) -> list[Parameter]:
        params = [self.encoder_weight]
        if self.config.decoupling_enabled:
            params += self.decoupler.parameters()
        for intra, inter in self.dual_path:
            params += intra.parameters() + inter.parameters()
        params += [self.mask_weight, self.mask_bias, self.decoder_weight]
        return collect_parameters(params)

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- pipeline stages ------------------------------------------------------

    def encode(self, w) -> Tensor:
        """Waveform -> [num_filters x L_frames] nonnegative features."""
        samples = w.samples if isinstance(w, Waveform) else np.asarray(w)
        enc = self.config.encoder
        length = samples.size
        if length < enc.kernel_len:
            raise InvalidInputError(
                f"input of {length} samples is shorter than one encoder "
                f"kernel ({enc.kernel_len})")
        x = Tensor(samples.reshape(1, -1).astype(float_dtype()))
        tail = (length - enc.kernel_len) % enc.stride
        if tail:
            x = pad_axis(x, 1, 0, enc.stride - tail)
        feats = relu(conv1d(x, self.encoder_weight.tensor, stride=enc.stride,
                            padding="none"))
        return assert_finite(feats, "encoder")

    def decode(self, features: Tensor, target_len: int) -> Tensor:
        """[num_filters x L_frames] -> waveform samples [target_len]."""
        if features.ndim != 2 or features.shape[0] != self.config.encoder.num_filters:
            raise DimensionError(
                f"decoder expects [{self.config.encoder.num_filters} x L], "
                f"got {features.shape}")
        out = conv_transpose1d(features, self.decoder_weight.tensor,
                               stride=self.config.encoder.stride)
        if target_len > out.shape[1]:
            raise DimensionError(
                f"target length {target_len} exceeds decodable {out.shape[1]}")
        return reshape(narrow(out, 1, 0, target_len), (target_len,))

    def _dual_path_pass(self, data: Tensor, training: bool) -> Tensor:
        rng = self._rng if training else None
        for intra, inter in self.dual_path:
            # intra: attend along the chunk axis, one sequence per chunk
            data = transpose(intra.forward(transpose(data, (2, 0, 1)), rng, training),
                             (1, 2, 0))
            # inter: attend across chunks at a fixed intra-chunk position
            data = transpose(inter.forward(transpose(data, (1, 0, 2)), rng, training),
                             (1, 0, 2))
        return assert_finite(data, "dual_path")

    def forward(self, samples, training: bool = False) -> list[Tensor]:
        """Differentiable separation of raw samples into n_src sample
        tensors of the input length."""
        samples = samples.samples if isinstance(samples, Waveform) else np.asarray(samples)
        length = samples.size
        cfg = self.config
        n = cfg.encoder.num_filters
        feats = self.encode(samples)

        ct = segment(feats, cfg.chunk_size, cfg.hop_size)
        data = ct.data
        k, s = ct.chunk_len, ct.num_chunks
        if cfg.decoupling_enabled:
            flat, _ = self.decoupler.forward(reshape(data, (n, k * s)))
            data = reshape(flat, (n, k, s))
        data = self._dual_path_pass(data, training)
        if cfg.decoupling_enabled:
            flat, _ = self.decoupler.inverse(reshape(data, (n, k * s)))
            data = reshape(flat, (n, k, s))

        mask_logits = add(conv2d_same(data, self.mask_weight.tensor),
                          reshape(self.mask_bias.tensor, (cfg.n_src * n, 1, 1)))
        assert_finite(mask_logits, "mask_head")

        # all sources at once: [n_src*n x k x s] stays rank 3 for overlap-add
        seqs = overlap_add(ChunkTensor(mask_logits, ct.hop_p, ct.original_len))
        masks = reshape(sigmoid(seqs), (cfg.n_src, n, ct.original_len))
        masked = mul(masks, reshape(feats, (1, n, ct.original_len)))
        decoded = conv_transpose1d(masked, self.decoder_weight.tensor,
                                   stride=cfg.encoder.stride)
        trimmed = reshape(narrow(decoded, 2, 0, length), (cfg.n_src, length))
        assert_finite(trimmed, "decoder")
        return [reshape(narrow(trimmed, 0, i, 1), (length,))
                for i in range(cfg.n_src)]

    def separate(self, mixture: Waveform) -> list[Waveform]:
        """Evaluation-mode separation into n_src waveforms matching the
        mixture's length and sample rate."""
        with no_grad():
            outs = self.forward(mixture.samples, training=False)
        return [Waveform(o.to_numpy(), mixture.sample_rate, label=f"src{i}")
                for i, o in enumerate(outs)]


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(model: SeparatorModel, path) -> None:
    entries = []
    blob = bytearray()
    for p in model.parameters():
        entries.append({"name": p.name, "shape": list(p.shape), "dtype": "float32",
                        "byte_offset": len(blob)})
        blob += p.tensor.data.astype("<f4").tobytes()
    manifest = json.dumps(
        {"format": "indiformer", "version": 1,
         "config": model.config.to_dict(), "params": entries},
        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        fh.write(blob)


def load_checkpoint(path, config: SeparatorConfig | None = None) -> SeparatorModel:
    """Rebuild a model from a checkpoint; rejects manifests whose
    parameters disagree with the configured architecture."""
    raw = open(path, "rb").read()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not an indiformer checkpoint")
    mlen = struct.unpack("<I", raw[4:8])[0]
    if 8 + mlen > len(raw):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[8:8 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != "indiformer":
        raise CheckpointError(f"{path}: unknown manifest format")
    try:
        file_config = SeparatorConfig.from_dict(manifest["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config in manifest ({exc})") from exc
    if config is None:
        config = file_config

    model = SeparatorModel(config, np.random.default_rng(0))
    params = model.parameters()
    entries = manifest.get("params", [])
    if len(entries) != len(params):
        raise CheckpointError(
            f"{path}: manifest has {len(entries)} parameters, "
            f"model expects {len(params)}")
    blob = raw[8 + mlen:]
    for p, e in zip(params, entries):
        if e["name"] != p.name or tuple(e["shape"]) != p.shape:
            raise CheckpointError(
                f"{path}: parameter {e['name']} {tuple(e['shape'])} does not match "
                f"model parameter {p.name} {p.shape}")
        start = e["byte_offset"]
        end = start + 4 * p.size
        if end > len(blob):
            raise CheckpointError(f"{path}: blob truncated at {p.name}")
        values = np.frombuffer(blob[start:end], dtype="<f4").astype(float_dtype())
        p.tensor.data = values.reshape(p.shape)
        p.zero_grad()
    return model
