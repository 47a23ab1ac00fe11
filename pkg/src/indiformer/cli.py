"""Command-line entry points: synth, train, separate, eval, gradcheck.

Configuration is a flat JSON document (keys identical to RunConfig
fields); command-line flags override file values, and every run that
produces artifacts writes back the effective configuration it used.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IndiformerError, InvalidInputError
from .metrics import MetricConfig, report
from .numerics import precision_bits, set_precision
from .separator import (
    EncoderConfig,
    SeparatorConfig,
    SeparatorModel,
    load_checkpoint,
)
from .signal_io import (
    Waveform,
    load_wav,
    mix,
    read_manifest,
    save_wav,
    segment_2s,
    split_dataset,
    synth_source,
    write_manifest,
)
from .training import TrainConfig, micro_gradcheck, train

DEFAULT_CLASSES = {
    "tone": {"freq": 320.0},
    "chirp": {"f0": 400.0, "f1": 1600.0},
    "am_tone": {"freq": 784.0, "am_rate": 3.7, "am_depth": 0.6},
    "band_noise": {"window": 6, "passes": 2},
}
SOURCE_GAIN = 0.5  # keeps saved 16-bit mixtures clip-free


@dataclass
class RunConfig:
    """Model configuration (defaults match the reference table) plus the
    run-level knobs: sampling, seeding, ablation switch and paths."""

    n_src: int = 2
    chunk_size: int = 100
    hop_size: int = 50
    n_repeat: int = 6
    n_head: int = 4
    dropout: float = 0.1
    encoder_filters: int = 128
    encoder_kernel: int = 16
    encoder_stride: int = 8
    lr: float = 0.001
    lr_reduced: float = 0.0001
    patience: int = 5
    epochs: int = 30
    batch_size: int = 4
    nll_weight: float = 0.0
    attn_local_kernel: int = 4
    attn_global_stride: int = 4
    coupling_layers: int = 2
    sample_rate: int = 8000
    seed: int = 0
    decoupling_enabled: bool = True
    precision: int = 32
    data_dir: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.chunk_size != 2 * self.hop_size:
            raise ConfigurationError(
                f"chunk_size {self.chunk_size} must equal 2*hop_size "
                f"({2 * self.hop_size})")

    @classmethod
    def load(cls, path) -> "RunConfig":
        values = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InvalidInputError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    def separator_config(self) -> SeparatorConfig:
        return SeparatorConfig(
            n_src=self.n_src,
            encoder=EncoderConfig(num_filters=self.encoder_filters,
                                  kernel_len=self.encoder_kernel,
                                  stride=self.encoder_stride),
            chunk_size=self.chunk_size, hop_size=self.hop_size,
            n_repeat=self.n_repeat, n_head=self.n_head,
            local_kernel=self.attn_local_kernel,
            global_stride=self.attn_global_stride,
            dropout=self.dropout, coupling_layers=self.coupling_layers,
            decoupling_enabled=self.decoupling_enabled)

    def train_config(self, max_steps=None) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr_initial=self.lr,
                           lr_reduced=self.lr_reduced, patience=self.patience,
                           batch_size=self.batch_size, seed=self.seed,
                           decoupling_enabled=self.decoupling_enabled,
                           nll_weight=self.nll_weight, max_steps=max_steps)


# -- dataset plumbing -------------------------------------------------------------

def synth_dataset(cfg: RunConfig, out_dir, n_mixtures: int = 64,
                  classes: list[str] | None = None) -> dict[str, list[dict]]:
    """Generate labeled sources, cut 2 s segments, mix class pairs, save
    WAVs and write the three split manifests."""
    classes = classes or list(DEFAULT_CLASSES)
    if len(classes) < 2:
        raise InvalidInputError("need at least two source classes")
    for c in classes:
        if c not in DEFAULT_CLASSES:
            raise InvalidInputError(f"unknown class {c!r}; one of {list(DEFAULT_CLASSES)}")
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)

    pairs = [(a, b) for i, a in enumerate(classes) for b in classes[i + 1:]]
    usage = {c: sum(1 for p in pairs for x in p if x == c) for c in classes}
    per_class = {c: -(-n_mixtures * usage[c] // len(pairs)) + 1 for c in classes}

    segments: dict[str, list[Waveform]] = {}
    for ci, c in enumerate(classes):
        long_src = synth_source(c, DEFAULT_CLASSES[c], 2.0 * per_class[c],
                                cfg.sample_rate, seed=cfg.seed + ci)
        segments[c] = segment_2s(long_src)

    cursors = {c: 0 for c in classes}
    entries = []
    for i in range(n_mixtures):
        ca, cb = pairs[i % len(pairs)]
        seg_a = segments[ca][cursors[ca] % len(segments[ca])]
        seg_b = segments[cb][cursors[cb] % len(segments[cb])]
        cursors[ca] += 1
        cursors[cb] += 1
        a = Waveform(seg_a.samples * SOURCE_GAIN, cfg.sample_rate, label=ca)
        b = Waveform(seg_b.samples * SOURCE_GAIN, cfg.sample_rate, label=cb)
        pair = mix(a, b)
        stem = f"mix_{i:05d}"
        save_wav(out / "wav" / f"{stem}.wav", pair.mixture)
        for j, src in enumerate(pair.sources):
            save_wav(out / "wav" / f"{stem}_src{j}.wav", src)
        entries.append({"path": f"wav/{stem}.wav",
                        "label": pair.mixture.label,
                        "sources": [ca, cb]})

    train_e, val_e, test_e = split_dataset(entries, cfg.seed)
    manifests = {"train": train_e, "val": val_e, "test": test_e}
    for split, rows in manifests.items():
        write_manifest(out / f"manifest_{split}.json",
                       [{"path": r["path"], "label": r["label"]} for r in rows])
    return manifests


def load_split(data_dir, split: str):
    """Load a split as MixturePairs; mixtures are rebuilt as the exact sum
    of the quantized sources so the pair invariant holds."""
    data = Path(data_dir)
    manifest_path = data / f"manifest_{split}.json"
    if not manifest_path.exists():
        raise InvalidInputError(f"missing manifest: {manifest_path}")
    pairs = []
    for entry in read_manifest(manifest_path):
        mix_path = data / entry["path"]
        stem = mix_path.with_suffix("")
        sources = []
        labels = (entry.get("label") or "").split("+")
        j = 0
        while (Path(f"{stem}_src{j}.wav")).exists():
            w = load_wav(f"{stem}_src{j}.wav")
            if j < len(labels) and labels[j]:
                w.label = labels[j]
            sources.append(w)
            j += 1
        if len(sources) < 2:
            raise InvalidInputError(f"missing source files for {mix_path}")
        pairs.append(mix(sources[0], sources[1]))
    return pairs


# -- commands ----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.out_dir or "dataset")
    manifests = synth_dataset(cfg, out, n_mixtures=args.n_mixtures,
                              classes=args.classes.split(",") if args.classes else None)
    cfg.save(out / "effective_config.json")
    counts = {k: len(v) for k, v in manifests.items()}
    print(f"wrote {sum(counts.values())} mixtures to {out} "
          f"(train/val/test = {counts['train']}/{counts['val']}/{counts['test']})")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    from .plotting import save_loss_figure

    data_dir = args.data or cfg.data_dir
    if not data_dir or not Path(data_dir).exists():
        raise InvalidInputError(f"dataset path not found: {data_dir}")
    out = Path(args.out or cfg.out_dir or "run")
    out.mkdir(parents=True, exist_ok=True)
    train_pairs = load_split(data_dir, "train")
    val_pairs = load_split(data_dir, "val")

    model = SeparatorModel(cfg.separator_config(), np.random.default_rng(cfg.seed))
    print(f"model parameters: {model.count_parameters()}")
    history = train(model, train_pairs, val_pairs,
                    cfg.train_config(max_steps=args.max_steps),
                    log_path=out / "train_log.jsonl",
                    checkpoint_path=out / "checkpoint.ckpt")
    cfg.save(out / "effective_config.json")
    save_loss_figure(history, out / "loss_curve.png")
    last = history.records[-1]
    print(f"finished epoch {last.epoch}: train {last.train_loss:.3f}, "
          f"val {last.val_loss:.3f} -> {out / 'checkpoint.ckpt'}")
    return 0


def cmd_separate(cfg: RunConfig, args) -> int:
    model = load_checkpoint(args.checkpoint)
    out = Path(args.out or cfg.out_dir or "separated")
    out.mkdir(parents=True, exist_ok=True)
    for wav_path in args.wavs:
        w = load_wav(wav_path)
        estimates = model.separate(w)
        stem = Path(wav_path).stem
        for i, est in enumerate(estimates):
            save_wav(out / f"{stem}_src{i}.wav", est)
        print(f"{wav_path}: {len(estimates)} sources -> {out}/{stem}_src*.wav")
    return 0


def _collect_eval_triples(est_dir, ref_dir, mix_dir, n_src: int):
    mix_paths = sorted(p for p in Path(mix_dir).glob("*.wav")
                       if "_src" not in p.stem)
    if not mix_paths:
        raise InvalidInputError(f"no mixture wav files in {mix_dir}")
    triples = []
    missing = []
    for mp in mix_paths:
        ests, refs = [], []
        for i in range(n_src):
            ep = Path(est_dir) / f"{mp.stem}_src{i}.wav"
            rp = Path(ref_dir) / f"{mp.stem}_src{i}.wav"
            for p, bucket in ((ep, ests), (rp, refs)):
                if not p.exists():
                    missing.append(str(p))
                else:
                    bucket.append(load_wav(p))
        if not missing:
            triples.append((ests, refs, load_wav(mp)))
    if missing:
        raise InvalidInputError("missing counterpart files: " + ", ".join(missing))
    return triples


def cmd_eval(cfg: RunConfig, args) -> int:
    from .plotting import save_metrics_figure, save_waveform_figure

    triples = _collect_eval_triples(args.est, args.ref, args.mix, cfg.n_src)
    frame = min(MetricConfig().frame_len,
                min(len(t[2]) for t in triples))
    rep = report(triples, MetricConfig(frame_len=frame))
    out = Path(args.out or cfg.out_dir or "eval")
    out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out / "report.csv")
    (out / "report.txt").write_text(rep.to_text() + "\n")
    save_metrics_figure(rep, out / "metrics.png")
    for idx, (ests, refs, mixture) in enumerate(triples[:args.figures]):
        save_waveform_figure(mixture, refs, ests, out / f"waveforms_{idx:03d}.png")
    print(rep.to_text())
    print(f"\nreport written to {out}/report.csv (figures alongside)")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    if precision_bits() != 64:
        print("gradcheck requires --precision 64 (finite differences are "
              "meaningless at 32-bit)", file=sys.stderr)
        return 1
    err = micro_gradcheck(seed=cfg.seed, corrupt=args.corrupt)
    ok = err <= 1e-6
    print(f"max relative gradient error: {err:.3e} "
          f"({'PASS' if ok else 'FAIL'}, threshold 1e-6)")
    return 0 if ok else 1


# -- argument plumbing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="indiformer",
        description="Time-domain two-source separation toolkit")
    parser.add_argument("--config", help="JSON config file (RunConfig keys)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--precision", type=int, choices=(32, 64),
                        help="float width (default 32; gradcheck defaults to 64)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic mixture dataset")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--n-mixtures", type=int, default=64)
    p.add_argument("--classes", help="comma-separated subset of "
                                     f"{','.join(DEFAULT_CLASSES)}")

    p = sub.add_parser("train", help="train a separator on a synth dataset")
    p.add_argument("--data", help="dataset directory (from synth)")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--epochs", type=int, help="override config epochs")
    p.add_argument("--max-steps", type=int, default=None,
                   help="stop after this many optimizer steps")
    p.add_argument("--no-decoupling", action="store_true",
                   help="ablation: bypass the feature decoupling stack")

    p = sub.add_parser("separate", help="separate mixtures with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("wavs", nargs="+", help="mixture wav files")

    p = sub.add_parser("eval", help="score separated estimates against references")
    p.add_argument("--est", required=True, help="directory of estimate wavs")
    p.add_argument("--ref", required=True, help="directory of reference wavs")
    p.add_argument("--mix", required=True, help="directory of mixture wavs")
    p.add_argument("--out", help="report output directory")
    p.add_argument("--figures", type=int, default=4,
                   help="number of waveform comparison figures")

    p = sub.add_parser("gradcheck", help="finite-difference check of the micro model")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if getattr(args, "epochs", None) is not None:
            cfg.epochs = args.epochs
        if getattr(args, "no_decoupling", False):
            cfg.decoupling_enabled = False
        if args.precision is not None:
            cfg.precision = args.precision
        elif args.command == "gradcheck":
            cfg.precision = 64
        set_precision(cfg.precision)
        handler = {"synth": cmd_synth, "train": cmd_train,
                   "separate": cmd_separate, "eval": cmd_eval,
                   "gradcheck": cmd_gradcheck}[args.command]
        return handler(cfg, args)
    except (IndiformerError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
