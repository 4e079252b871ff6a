"""Command-line entry point: ``bearing-vit {synth,prepare,train,eval,predict}``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import re
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

import numpy as np

from . import evaluator, signal_io, stft, synth
from .config import RunConfig
from .errors import (
    BearingVitError,
    ConfigMismatch,
    DataError,
    MalformedFile,
    NumericError,
    SignalTooShort,
    UsageError,
)
from .signal_io import Channel, ManifestEntry, SignalFormat
from .trainer import (
    AdamState,
    ImageSet,
    TrainHistory,
    load_training_checkpoint,
    save_training_checkpoint,
    train,
)
from .vit import ViT

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

SPLIT_INDEX = "split.txt"
CLASSES_FILE = "classes.txt"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _safe_stem(source_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", source_id)


# ---------------------------------------------------------------------------
# Prepared dataset directory


def load_prepared(data_dir: str | Path) -> tuple[tuple[str, ...], dict[str, ImageSet]]:
    root = Path(data_dir)
    try:
        classes = tuple(root.joinpath(CLASSES_FILE).read_text(encoding="utf-8").split())
        index = root.joinpath(SPLIT_INDEX).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{root}: not a prepared dataset ({exc.strerror or exc})") from exc
    ids = {name: i for i, name in enumerate(classes)}
    rows: dict[str, tuple[list[np.ndarray], list[int]]] = {s: ([], []) for s in ("train", "val", "test")}
    for lineno, line in enumerate(index.splitlines()[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5 or parts[0] not in rows or parts[1] not in ids:
            raise MalformedFile(f"{root / SPLIT_INDEX}:{lineno}: bad index row")
        images, labels = rows[parts[0]]
        images.append(stft.load_image(root / parts[2]).pixels)
        labels.append(ids[parts[1]])
    sets = {}
    for name, (images, labels) in rows.items():
        arr = np.stack(images) if images else np.zeros((0, 1, 1, 1))
        sets[name] = ImageSet(arr, np.array(labels, dtype=np.intp))
    return classes, sets


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg: RunConfig, out_dir: str, classes: int | None = None, segments: int | None = None) -> Path:
    if classes is not None:
        cfg.set("synth.classes", classes)
    if segments is not None:
        cfg.set("synth.segments_per_class", segments)
    specs = synth.default_suite(cfg["synth.classes"])
    signals = synth.generate_class_signals(
        specs,
        cfg["synth.segments_per_class"],
        cfg["signal.segment_len"],
        cfg["signal.sample_rate"],
        cfg.seed,
    )
    out = _out_dir(out_dir)
    sig_dir = out / "signals"
    sig_dir.mkdir(exist_ok=True)
    entries = []
    for label, sig in signals.items():
        rel = f"signals/{label.name}.f64"
        signal_io.write_raw_f64le(out / rel, sig.samples)
        entries.append(ManifestEntry(rel, label, Channel.DRIVE_END, sig.sample_rate))
    signal_io.write_manifest(out / "manifest.txt", entries)
    cfg.write(out)
    _log(f"wrote {len(entries)} synthetic signals to {out}")
    return out


def cmd_prepare(cfg: RunConfig, manifest: str, out_dir: str) -> Path:
    entries = signal_io.read_manifest(manifest)
    if not entries:
        raise DataError(f"{manifest}: manifest lists no files")
    root = Path(manifest).parent
    segments = []
    for entry in entries:
        try:
            sig = entry.load(root)
        except DataError as exc:
            raise DataError(f"{entry.path}: {exc}") from exc
        segs = signal_io.segment_signal(sig, cfg["signal.segment_len"], cfg["signal.stride"], entry.label)
        segments.extend(segs)
    split = signal_io.split_dataset(segments, cfg.split_ratios(), cfg.seed)
    kwargs = cfg.stft_kwargs()
    classes = sorted({e.label for e in entries}, key=lambda lab: lab.class_id)

    rendered = []
    for part, segs in split.parts().items():
        for seg in segs:
            image = stft.segment_to_image(seg.samples, **kwargs)
            rel = f"images/{seg.label.name}/{_safe_stem(seg.source_id)}_{seg.start:09d}.tfi"
            rendered.append((part, seg, rel, image))

    out = _out_dir(out_dir)
    for label in classes:
        (out / "images" / label.name).mkdir(parents=True, exist_ok=True)
    lines = ["split\tlabel\timage\tsource_id\tstart"]
    for part, seg, rel, image in rendered:
        stft.save_image(out / rel, image)
        lines.append(f"{part}\t{seg.label.name}\t{rel}\t{seg.source_id}\t{seg.start}")
    (out / SPLIT_INDEX).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / CLASSES_FILE).write_text("".join(f"{c.name}\n" for c in classes), encoding="utf-8")
    cfg.write(out)
    counts = {p: len(s) for p, s in split.parts().items()}
    _log(f"prepared {len(rendered)} images in {len(classes)} classes {counts}")
    return out


def cmd_train(cfg: RunConfig, data_dir: str, out_dir: str, epochs: int | None = None) -> Path:
    if epochs is not None:
        cfg.set("train.epochs", epochs)
    classes, sets = load_prepared(data_dir)
    train_set, val_set = sets["train"], sets["val"]
    if len(train_set) == 0:
        raise DataError(f"{data_dir}: training split is empty")
    _, h, w, c = train_set.images.shape
    model = ViT(cfg.vit_config(h, w, c, classes))
    out = _out_dir(out_dir)
    cfg.write(out)
    state = AdamState.zeros_like(model.params)
    model, history = train(
        model, train_set, val_set, cfg.train_config(), checkpoint_dir=out, state=state, log=_log
    )
    save_training_checkpoint(out / "final.ckpt", model, state)
    if not (out / "best.ckpt").exists():
        model.save(out / "best.ckpt")
    history.write_csv(out / "history.csv")
    _log(f"trained {len(history)} epochs; checkpoints in {out}")
    return out


def _load_model(checkpoint: str) -> ViT:
    try:
        model, _ = load_training_checkpoint(checkpoint)
    except OSError as exc:
        raise DataError(f"{checkpoint}: {exc.strerror or exc}") from exc
    return model


def cmd_eval(cfg: RunConfig, checkpoint: str, data_dir: str, split: str, out_dir: str) -> float:
    model = _load_model(checkpoint)
    classes, sets = load_prepared(data_dir)
    if split not in sets:
        raise UsageError(f"unknown split {split!r}")
    data = sets[split]
    if len(data) == 0:
        raise DataError(f"{data_dir}: split {split!r} is empty")
    mc = model.config
    expected = (mc.height, mc.width, mc.channels)
    if data.images.shape[1:] != expected:
        raise ConfigMismatch(
            f"checkpoint expects images of shape {expected}, dataset has {data.images.shape[1:]}"
        )
    if mc.class_names and tuple(mc.class_names) != classes:
        raise ConfigMismatch(f"checkpoint classes {mc.class_names} != dataset classes {classes}")
    preds = np.argmax(model.predict_proba(data.images), axis=1)
    cm = evaluator.confusion(preds, data.labels, mc.num_classes, classes)
    acc = evaluator.accuracy(preds, data.labels)
    history = None
    hist_path = Path(checkpoint).parent / "history.csv"
    if hist_path.exists():
        history = TrainHistory.from_csv(hist_path.read_text(encoding="utf-8"))
    out = _out_dir(out_dir)
    cfg.write(out)
    evaluator.export_report(cm, history, acc, out, config_hash=cfg.digest())
    print(f"accuracy_pct={acc!r}")
    return acc


def cmd_predict(
    cfg: RunConfig,
    checkpoint: str,
    signal_path: str,
    fmt: str | None = None,
    var: str | None = None,
    out_dir: str | None = None,
) -> list[tuple[int, str, float]]:
    model = _load_model(checkpoint)
    channel = Channel(cfg["signal.channel"])
    hint = var if var is not None else signal_io.CHANNEL_VAR_HINTS.get(channel)
    sig = signal_io.load_signal(
        signal_path,
        SignalFormat(fmt) if fmt else None,
        hint,
        sample_rate=cfg["signal.sample_rate"],
        channel=channel,
    )
    seg_len = cfg["signal.segment_len"]
    segments = signal_io.segment_signal(sig, seg_len, cfg["signal.stride"])
    if not segments:
        raise SignalTooShort(f"{signal_path}: {len(sig)} samples < segment_len={seg_len}")
    kwargs = cfg.stft_kwargs()
    images = np.stack([stft.segment_to_image(s.samples, **kwargs).pixels for s in segments])
    mc = model.config
    if images.shape[1:] != (mc.height, mc.width, mc.channels):
        raise ConfigMismatch(
            f"checkpoint expects images of shape {(mc.height, mc.width, mc.channels)}, "
            f"config produces {images.shape[1:]}"
        )
    names = mc.class_names or tuple(str(i) for i in range(mc.num_classes))
    probs = model.predict_proba(images)
    results = []
    lines = ["segment_index,label,confidence"]
    for i, row in enumerate(probs):
        k = int(np.argmax(row))
        results.append((i, names[k], float(row[k])))
        lines.append(f"{i},{names[k]},{float(row[k])!r}")
    votes = Counter(label for _, label, _ in results)
    # ties resolve to the earliest class in model order
    winner = max(names, key=lambda n: (votes.get(n, 0), -names.index(n)))
    lines.append(f"majority,{winner},{votes[winner]}/{len(results)}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out_dir is not None:
        out = _out_dir(out_dir)
        (out / "predictions.csv").write_text(text, encoding="utf-8")
        cfg.write(out)
    return results


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bearing-vit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", help="section.key = value config file")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")

    p = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--segments-per-class", type=int)

    p = sub.add_parser("prepare", help="convert manifest signals to TF images and split them")
    common(p)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("train", help="train a ViT on a prepared dataset")
    common(p)
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))

    p = sub.add_parser("predict", help="classify every segment of one signal file")
    common(p, out_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--signal", required=True)
    p.add_argument("--format", choices=[f.value for f in SignalFormat])
    p.add_argument("--var", help="MAT variable name fragment")
    return parser


def run(args: argparse.Namespace) -> int:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    cfg = RunConfig.load(args.config, overrides)
    if args.command == "synth":
        cmd_synth(cfg, args.out, args.classes, args.segments_per_class)
    elif args.command == "prepare":
        cmd_prepare(cfg, args.manifest, args.out)
    elif args.command == "train":
        cmd_train(cfg, args.data, args.out, args.epochs)
    elif args.command == "eval":
        cmd_eval(cfg, args.checkpoint, args.data, args.split, args.out)
    elif args.command == "predict":
        cmd_predict(cfg, args.checkpoint, args.signal, args.format, args.var, args.out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except NumericError as exc:
        _log(f"error: {exc}")
        return EXIT_DIVERGED
    except UsageError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA
    except BearingVitError as exc:
        _log(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
