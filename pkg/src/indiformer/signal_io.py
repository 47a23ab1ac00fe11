"""Audio I/O, synthetic test sources, additive mixing, dataset splitting.

Files are mono RIFF/WAVE, PCM 16-bit integer or IEEE 32-bit float,
little-endian.  Dataset manifests are JSON arrays of {path, label}
entries.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidInputError,
    UnsupportedChannelCountError,
    UnsupportedCodecError,
)

PCM16_SCALE = 32768.0

_WAVE_FORMAT_NAMES = {
    0x0002: "ADPCM", 0x0006: "A-law", 0x0007: "mu-law", 0x0011: "IMA ADPCM",
    0x0055: "MP3", 0xFFFE: "extensible",
}


@dataclass
class Waveform:
    """Mono sample sequence with a sample rate and optional class label."""

    samples: np.ndarray
    sample_rate: int
    label: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidInputError("waveform samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MixturePair:
    """An additive mixture together with its ground-truth sources."""

    mixture: Waveform
    sources: list[Waveform] = field(default_factory=list)

    def __post_init__(self):
        if len(self.sources) < 2:
            raise InvalidInputError("a mixture pair needs at least two sources")
        for s in self.sources:
            if s.sample_rate != self.mixture.sample_rate:
                raise InvalidInputError(
                    f"source rate {s.sample_rate} != mixture rate {self.mixture.sample_rate}")
            if len(s) != len(self.mixture):
                raise InvalidInputError(
                    f"source length {len(s)} != mixture length {len(self.mixture)}")
        total = np.sum([s.samples for s in self.sources], axis=0)
        if not np.allclose(total, self.mixture.samples, atol=1e-9, rtol=0):
            raise InvalidInputError("mixture is not the elementwise sum of its sources")


# -- WAV files -----------------------------------------------------------------

def load_wav(path) -> Waveform:
    """Read a mono PCM16 or IEEE float32 WAV file.

    PCM16 samples are scaled to [-1, 1) by division by 32768.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise UnsupportedCodecError(f"{path}: not a RIFF/WAVE container")
    fmt = data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        size = struct.unpack("<I", blob[pos + 4:pos + 8])[0]
        body = blob[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or len(fmt) < 16 or data is None:
        raise UnsupportedCodecError(f"{path}: missing fmt/data chunk")
    code, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if channels != 1:
        raise UnsupportedChannelCountError(
            f"{path}: {channels} channels, only mono is supported")
    if code == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / PCM16_SCALE
    elif code == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        name = _WAVE_FORMAT_NAMES.get(code, f"format 0x{code:04x}")
        raise UnsupportedCodecError(
            f"{path}: unsupported codec ({name}, {bits}-bit); "
            "need PCM 16-bit or IEEE float 32-bit")
    return Waveform(samples, rate)


def save_wav(path, w: Waveform) -> None:
    """Write 16-bit PCM; samples are clamped to [-1, 1)."""
    codes = np.clip(np.round(w.samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    payload = codes.tobytes()
    hdr = struct.pack("<4sI4s", b"RIFF", 36 + len(payload), b"WAVE")
    fmt = struct.pack("<4sIHHIIHH", b"fmt ", 16, 1, 1, w.sample_rate,
                      w.sample_rate * 2, 2, 16)
    Path(path).write_bytes(hdr + fmt + struct.pack("<4sI", b"data", len(payload)) + payload)


# -- synthetic sources -----------------------------------------------------------

SOURCE_KINDS = ("tone", "chirp", "am_tone", "band_noise")


def synth_source(kind: str, params: dict, duration_s: float, sample_rate: int,
                 seed: int = 0) -> Waveform:
    """Deterministic labeled test source with peak amplitude 0.7.

    Kinds: pure sine, linear chirp f0->f1, sine with a slow amplitude
    modulation, Gaussian noise band-limited by a moving-average cascade.
    """
    if duration_s <= 0:
        raise InvalidInputError(f"duration must be positive, got {duration_s}")
    if sample_rate <= 0:
        raise InvalidInputError(f"sample rate must be positive, got {sample_rate}")
    n = int(round(duration_s * sample_rate))
    if n < 1:
        raise InvalidInputError("duration shorter than one sample")
    t = np.arange(n) / sample_rate

    if kind == "tone":
        freq = float(params.get("freq", 440.0))
        if freq <= 0:
            raise InvalidInputError(f"frequency must be positive, got {freq}")
        x = np.sin(2 * math.pi * freq * t + params.get("phase", 0.0))
    elif kind == "chirp":
        f0 = float(params.get("f0", 500.0))
        f1 = float(params.get("f1", 1500.0))
        if f0 <= 0 or f1 <= 0:
            raise InvalidInputError(f"chirp frequencies must be positive, got {f0}, {f1}")
        sweep = f0 * t + (f1 - f0) * t * t / (2.0 * duration_s)
        x = np.sin(2 * math.pi * sweep + params.get("phase", 0.0))
    elif kind == "am_tone":
        freq = float(params.get("freq", 440.0))
        am_rate = float(params.get("am_rate", 4.0))
        if freq <= 0 or am_rate <= 0:
            raise InvalidInputError(
                f"carrier/modulation rates must be positive, got {freq}, {am_rate}")
        depth = float(params.get("am_depth", 0.5))
        env = 1.0 - depth + depth * 0.5 * (
            1.0 + np.sin(2 * math.pi * am_rate * t + params.get("am_phase", 0.0)))
        x = env * np.sin(2 * math.pi * freq * t + params.get("phase", 0.0))
    elif kind == "band_noise":
        window = int(params.get("window", 8))
        passes = int(params.get("passes", 2))
        if window < 1 or passes < 1:
            raise InvalidInputError("band_noise needs window >= 1 and passes >= 1")
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(n)
        kernel = np.ones(window) / window
        for _ in range(passes):
            x = np.convolve(x, kernel, mode="same")
    else:
        raise InvalidInputError(f"unknown source kind {kind!r}; one of {SOURCE_KINDS}")

    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (0.7 / peak)
    return Waveform(x, sample_rate, label=kind)


# -- segmentation / mixing / splitting --------------------------------------------

def segment_2s(w: Waveform) -> list[Waveform]:
    """Non-overlapping 2-second slices; the trailing remainder is dropped."""
    n = 2 * w.sample_rate
    count = len(w) // n
    return [Waveform(w.samples[i * n:(i + 1) * n], w.sample_rate, label=w.label)
            for i in range(count)]


def mix(a: Waveform, b: Waveform) -> MixturePair:
    """Additive two-source mixture; no renormalization."""
    if a.sample_rate != b.sample_rate:
        raise InvalidInputError(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")
    if len(a) != len(b):
        raise InvalidInputError(f"lengths differ: {len(a)} vs {len(b)}")
    label = "+".join(s.label or "?" for s in (a, b))
    mixture = Waveform(a.samples + b.samples, a.sample_rate, label=label)
    return MixturePair(mixture=mixture, sources=[a, b])


def split_dataset(items: list, seed: int) -> tuple[list, list, list]:
    """Seeded shuffle, then 70/20/10 partition (floor for val/test,
    remainder to train)."""
    n = len(items)
    if n < 10:
        raise InvalidInputError(f"need at least 10 items to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(n * 0.2)
    n_test = int(n * 0.1)
    n_train = n - n_val - n_test
    shuffled = [items[i] for i in order]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


# -- manifests ----------------------------------------------------------------------

def write_manifest(path, entries: list[dict]) -> None:
    """Write a dataset manifest: a JSON array of {path, label} objects."""
    rows = [{"path": str(e["path"]), "label": e.get("label")} for e in entries]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def read_manifest(path) -> list[dict]:
    rows = json.loads(Path(path).read_text())
    if not isinstance(rows, list):
        raise InvalidInputError(f"{path}: manifest must be a JSON array")
    return rows
