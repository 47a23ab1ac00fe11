"""Separation quality metrics: SNR, segmental SNR, scale-invariant SNR
and its improvement over the unprocessed mixture.

All computations run in float64 regardless of the global model
precision.  Ratios are floored by eps and results capped at +-snr_cap
so reports stay finite and comparable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .signal_io import Waveform


@dataclass
class MetricConfig:
    frame_len: int = 512
    snr_cap: float = 100.0
    eps: float = 1e-12

    def __post_init__(self):
        if self.frame_len < 1:
            raise InvalidInputError(f"frame length must be >= 1, got {self.frame_len}")
        if self.snr_cap <= 0:
            raise InvalidInputError(f"snr cap must be positive, got {self.snr_cap}")


DEFAULT_CONFIG = MetricConfig()


def _samples(x) -> np.ndarray:
    arr = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    return arr.astype(np.float64, copy=False)


def _pair(estimate, reference) -> tuple[np.ndarray, np.ndarray]:
    e, r = _samples(estimate), _samples(reference)
    if e.shape != r.shape:
        raise InvalidInputError(f"length mismatch: estimate {e.shape}, reference {r.shape}")
    return e, r


def _ratio_db(num: float, den: float, cfg: MetricConfig) -> float:
    den = max(den, cfg.eps * num)
    if num <= 0.0:
        return -cfg.snr_cap
    return float(np.clip(10.0 * np.log10(num / den), -cfg.snr_cap, cfg.snr_cap))


def snr(estimate, reference, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """10 log10 of reference energy over error energy, in dB."""
    e, r = _pair(estimate, reference)
    ref_energy = float(r @ r)
    if ref_energy == 0.0:
        raise InvalidInputError("reference signal is all-zero")
    err = e - r
    return _ratio_db(ref_energy, float(err @ err), cfg)


def seg_snr(estimate, reference, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Mean of per-frame SNRs over floor(len / frame_len) full frames;
    each frame is clamped to [-snr_cap, +snr_cap]."""
    e, r = _pair(estimate, reference)
    m = cfg.frame_len
    f_l = e.size // m
    if f_l < 1:
        raise InvalidInputError(
            f"signal of {e.size} samples is shorter than one frame ({m})")
    vals = []
    for i in range(f_l):
        rf = r[i * m:(i + 1) * m]
        ef = e[i * m:(i + 1) * m]
        err = ef - rf
        vals.append(_ratio_db(float(rf @ rf), float(err @ err), cfg))
    return float(np.mean(vals))


def sisnr(estimate, reference, cfg: MetricConfig = DEFAULT_CONFIG,
          literal: bool = False) -> float:
    """Scale-invariant SNR: project the estimate onto the reference,
    score the projected (true) part against the residual.

    With literal=True the projection runs onto the estimate instead,
    which matches the printed equation but is not scale-invariant in
    the reference; it exists for comparison only.
    """
    e, r = _pair(estimate, reference)
    if float(r @ r) == 0.0:
        raise InvalidInputError("reference signal is all-zero")
    if float(e @ e) == 0.0:
        raise InvalidInputError("estimate signal is all-zero")
    if literal:
        x_t = (float(r @ e) / float(e @ e)) * e
    else:
        x_t = (float(e @ r) / float(r @ r)) * r
    x_e = e - x_t
    return _ratio_db(float(x_t @ x_t), float(x_e @ x_e), cfg)


def sisnri(estimate, reference, mixture, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """SISNR improvement of the estimate over the raw mixture, in dB."""
    return sisnr(estimate, reference, cfg) - sisnr(mixture, reference, cfg)


def best_assignment(estimates, references, cfg: MetricConfig = DEFAULT_CONFIG) -> tuple[int, ...]:
    """Permutation of estimate indices maximizing total SISNR against the
    references (reference i is scored against estimate perm[i])."""
    n = len(references)
    if len(estimates) != n:
        raise InvalidInputError(f"{len(estimates)} estimates vs {n} references")
    best, best_score = None, -np.inf
    for perm in permutations(range(n)):
        score = sum(sisnr(estimates[perm[i]], references[i], cfg) for i in range(n))
        if score > best_score:
            best, best_score = perm, score
    return best


@dataclass
class ReportRow:
    pair: str
    label: str
    snr_db: float
    segsnr_db: float
    sisnri_db: float


@dataclass
class Report:
    """Per-pair metric rows plus a terminal mean row."""

    rows: list[ReportRow] = field(default_factory=list)
    source_rows: list[ReportRow] = field(default_factory=list)

    CSV_HEADER = "pair,class,snr_db,segsnr_db,sisnri_db"

    @property
    def mean_row(self) -> ReportRow:
        return self.rows[-1]

    def per_class(self) -> dict[str, tuple[float, float, float]]:
        """Aggregate per-source metrics by class label."""
        acc: dict[str, list[list[float]]] = {}
        for row in self.source_rows:
            acc.setdefault(row.label, []).append(
                [row.snr_db, row.segsnr_db, row.sisnri_db])
        return {k: tuple(np.mean(v, axis=0)) for k, v in sorted(acc.items())}

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_HEADER.split(","))
        for row in self.rows:
            writer.writerow([row.pair, row.label, f"{row.snr_db:.4f}",
                             f"{row.segsnr_db:.4f}", f"{row.sisnri_db:.4f}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    def to_text(self) -> str:
        widths = (10, 24, 12, 12, 12)
        header = ("pair", "class", "snr_db", "segsnr_db", "sisnri_db")
        lines = ["".join(h.ljust(w) for h, w in zip(header, widths))]
        lines.append("-" * sum(widths))
        for row in self.rows:
            lines.append("".join([
                row.pair.ljust(widths[0]), row.label.ljust(widths[1]),
                f"{row.snr_db:10.3f}".ljust(widths[2]),
                f"{row.segsnr_db:10.3f}".ljust(widths[3]),
                f"{row.sisnri_db:10.3f}".ljust(widths[4])]))
        return "\n".join(lines)


def report(pairs, cfg: MetricConfig = DEFAULT_CONFIG) -> Report:
    """Score a list of (estimates, references, mixture) triples.

    Per triple, the estimate-to-reference assignment is resolved by best
    total SISNR; metrics are averaged over the triple's sources. Emits
    one row per triple plus a final mean row.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("report needs at least one evaluated pair")
    rep = Report()
    sums = np.zeros(3)
    for idx, (estimates, references, mixture) in enumerate(pairs):
        if len(estimates) != len(references):
            raise InvalidInputError(
                f"pair {idx}: {len(estimates)} estimates vs {len(references)} references")
        perm = best_assignment(estimates, references, cfg)
        vals = np.zeros(3)
        labels = []
        for i, ref in enumerate(references):
            est = estimates[perm[i]]
            label = (ref.label if isinstance(ref, Waveform) and ref.label else f"src{i}")
            labels.append(label)
            triple = (snr(est, ref, cfg), seg_snr(est, ref, cfg),
                      sisnri(est, ref, mixture, cfg))
            rep.source_rows.append(ReportRow(str(idx), label, *triple))
            vals += np.array(triple)
        vals /= len(references)
        sums += vals
        rep.rows.append(ReportRow(str(idx), "+".join(labels), *vals))
    mean_vals = sums / len(pairs)
    rep.rows.append(ReportRow("mean", "all", *mean_vals))
    return rep
