"""Command-line front end.

Every command writes a ``key=value`` manifest next to its outputs. The
manifest's ``argv`` line is the fully resolved command, so
``vidattn replay <manifest>`` regenerates the same files, and
``--check`` compares their CRC-32 against the recorded ones.
"""
from __future__ import annotations

import argparse
import shlex
import sys
import time
import warnings
import zlib
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .binio import FormatError, decode_named_tensors
from .datagen.container import decode_container, encode_container, write_pgm
from .datagen.mnist import IdxError, export_bundled_subset, load_mnist_dir
from .datagen.moving import LABEL_ORDERS, MODES, SPLITS, DatasetSpec, elastic_dataset, generate_dataset
from .datagen.container import read_container, read_header
from .datagen.warp import ElasticParams
from .networks import VARIANTS, ModelSpec, ParamStore, load_checkpoint, param_ledger, save_checkpoint
from .training import (TrainConfig, evaluate, pretrain, scaled_mnist_splits, train_video_classifier,
                       uniform_lstm)

# flags whose values are filesystem paths; the manifest records them absolute
PATH_FLAGS = {"out", "mnist_dir", "backbone_ckpt", "lstm_ckpt", "data", "test_data", "ckpt", "out_dir",
              "input", "ckpts", "datasets"}


class CliError(Exception):
    pass


# ---------------------------------------------------------------- output bookkeeping

class Outputs:
    """Collects written files and verifies each by re-reading it."""

    def __init__(self):
        self.files: Dict[str, int] = {}

    def write_bytes(self, path, data: bytes) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        crc = zlib.crc32(data)
        if zlib.crc32(path.read_bytes()) != crc:
            raise CliError(f"verification failed for {path}: bytes on disk differ from what was written")
        self.files[str(path)] = crc
        return path

    def write_text(self, path, text: str) -> Path:
        return self.write_bytes(path, text.encode("utf-8"))

    def add_file(self, path) -> None:
        """Register a file written by someone else (a figure)."""
        path = Path(path)
        if not path.is_file() or path.stat().st_size == 0:
            raise CliError(f"expected output {path} was not written")
        self.files[str(path)] = zlib.crc32(path.read_bytes())


def _canonical_argv(command: str, args: argparse.Namespace) -> List[str]:
    argv = [command]
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command") or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
            continue
        values = value if isinstance(value, list) else [value]
        if key in PATH_FLAGS:
            values = [",".join(str(Path(p).resolve()) for p in str(v).split(",")) for v in values]
        argv.append(flag)
        argv.extend(str(v) for v in values)
    return argv


def write_manifest(path, command: str, args: argparse.Namespace, outputs: Outputs,
                   started: float, extra: Optional[Dict[str, object]] = None) -> Path:
    lines = [f"command={command}", f"tool_version={__version__}",
             f"argv={shlex.join(_canonical_argv(command, args))}"]
    for key, value in sorted(vars(args).items()):
        if key not in ("func", "command"):
            shown = " ".join(map(str, value)) if isinstance(value, list) else value
            lines.append(f"config.{key}={shown}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    for name, crc in outputs.files.items():
        lines.append(f"output={name}")
        lines.append(f"output_crc32={crc:08x}")
    lines.append(f"duration_seconds={time.perf_counter() - started:.3f}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{n}: manifest lines are key=value, got {line!r}")
        out.setdefault(key, []).append(value)
    return out


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest")


# ---------------------------------------------------------------- commands

def _load_mnist(directory, split):
    if not Path(directory).is_dir():
        raise CliError(f"MNIST directory {directory} does not exist (run `vidattn fetch-mnist --out DIR`)")
    return load_mnist_dir(directory, split)


def cmd_fetch_mnist(args, outputs: Outputs) -> dict:
    counts = export_bundled_subset(args.out)
    for p in sorted(Path(args.out).iterdir()):
        if p.name.endswith("ubyte"):
            outputs.add_file(p)
    print(f"wrote {counts['train']} train and {counts['test']} test digits to {args.out}")
    return {"manifest": Path(args.out) / "mnist.manifest"}


def cmd_gen(args, outputs: Outputs) -> dict:
    from .plots import plot_histogram

    spec = DatasetSpec(mode=args.mode, split=args.split, seed=args.seed, label_order=args.label_order,
                       sequences_per_class=args.sequences_per_class, frames=args.frames)
    ds = generate_dataset(spec, _load_mnist(args.mnist_dir, args.split))
    outputs.write_bytes(args.out, encode_container(ds))
    decode_container(Path(args.out).read_bytes())
    counts = np.bincount(ds.labels, minlength=100)
    distinct = int((counts > 0).sum())
    print(f"{len(ds)} sequences x {ds.frames.shape[1]} frames, mode {ds.mode}, split {args.split}")
    print(f"class histogram: {distinct} distinct labels, sequences per label min {counts[counts > 0].min()} "
          f"max {counts.max()}")
    fig = Path(args.out).with_suffix(".labels.png")
    plot_histogram(ds.labels, fig)
    outputs.add_file(fig)
    return {"distinct_labels": distinct}


def _pretrain_cfg(args) -> TrainConfig:
    return TrainConfig.pretrain_defaults(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                                         loc_lr_scale=args.loc_lr_scale)


def cmd_pretrain(args, outputs: Outputs) -> dict:
    from .plots import plot_curves

    spec = ModelSpec.profile(args.profile, args.variant)
    if args.variant == "dcn" and args.profile == "full":
        warnings.warn("the full-size DCN backbone has over 100M parameters; pre-training it on CPU takes many "
                      "hours", RuntimeWarning, stacklevel=1)
    cfg = _pretrain_cfg(args)
    xtr, ytr, xte, yte = scaled_mnist_splits(_load_mnist(args.mnist_dir, "train"),
                                             _load_mnist(args.mnist_dir, "test"),
                                             args.train_images, args.test_images, args.seed)
    res = pretrain(spec, xtr, ytr, xte, yte, cfg, progress=print)
    meta = {"test_loss": res.test_loss, "test_accuracy": res.test_accuracy}
    save_checkpoint(res.params, args.out, meta)
    outputs.write_bytes(args.out, Path(args.out).read_bytes())
    load_checkpoint(args.out, spec)
    tsv = "epoch\ttrain_loss\n" + "".join(f"{i + 1}\t{v!r}\n" for i, v in enumerate(res.epoch_loss))
    outputs.write_text(Path(args.out).with_suffix(".curve.tsv"), tsv)
    fig = Path(args.out).with_suffix(".curve.png")
    plot_curves({f"{spec.variant} ({args.profile})": np.array([res.epoch_loss])}, fig)
    outputs.add_file(fig)
    print(f"test loss {res.test_loss:.4f} accuracy {res.test_accuracy:.2f}%")
    return meta


def _load_backbone(path, variant=None, profile=None) -> ParamStore:
    spec = ModelSpec.profile(profile or "reduced", variant) if variant else None
    store = load_checkpoint(path, spec)
    if not isinstance(store.spec, ModelSpec):
        raise CliError(f"{path} is not a backbone checkpoint")
    return store


def cmd_train(args, outputs: Outputs) -> dict:
    from .plots import plot_curves

    before = zlib.crc32(Path(args.backbone_ckpt).read_bytes())
    backbone = _load_backbone(args.backbone_ckpt, args.variant, args.profile)
    train = read_container(args.data)
    test = read_container(args.test_data) if args.test_data else None
    cfg = TrainConfig.video_defaults(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                                     repetitions=args.repetitions, seed=args.seed)
    res = train_video_classifier(backbone, train, cfg, test, progress=print)
    curves = res.curves
    for e, loss in enumerate(curves.mean(axis=0)):
        print(f"epoch {e + 1}: mean training loss {loss:.4f}")
    if zlib.crc32(Path(args.backbone_ckpt).read_bytes()) != before:
        raise CliError("backbone checkpoint changed during training")
    lstm = res.repetitions[0].lstm
    save_checkpoint(lstm, args.out)
    outputs.write_bytes(args.out, Path(args.out).read_bytes())
    lines = ["repetition\tepoch\ttrain_loss"]
    lines += [f"{r}\t{e + 1}\t{v!r}" for r, row in enumerate(curves.tolist()) for e, v in enumerate(row)]
    outputs.write_text(Path(args.out).with_suffix(".curves.tsv"), "\n".join(lines) + "\n")
    fig = Path(args.out).with_suffix(".curves.png")
    plot_curves({backbone.spec.variant: curves}, fig)
    outputs.add_file(fig)
    extra = {"repetitions": len(res.repetitions), "final_train_loss": float(curves[:, -1].mean())}
    if test is not None:
        extra.update(test_loss=res.mean_loss, test_accuracy=res.mean_accuracy)
        print(f"averaged over {len(res.repetitions)} repetition(s): test loss {res.mean_loss:.4f} "
              f"accuracy {res.mean_accuracy:.2f}%")
    else:
        print(f"averaged over {len(res.repetitions)} repetition(s): final training loss "
              f"{extra['final_train_loss']:.4f}")
    return extra


def cmd_eval(args, outputs: Outputs) -> dict:
    backbone = _load_backbone(args.backbone_ckpt)
    data = read_container(args.data)
    if args.uniform_baseline:
        lstm = uniform_lstm(backbone.spec.fc_width)
    elif args.lstm_ckpt:
        lstm = load_checkpoint(args.lstm_ckpt)
    else:
        raise CliError("eval needs --lstm-ckpt or --uniform-baseline")
    loss, acc = evaluate(backbone, lstm, data)
    print(f"loss {loss:.4f} accuracy {acc:.2f}%")
    if args.out:
        outputs.write_text(args.out, f"loss\taccuracy\n{loss!r}\t{acc!r}\n")
    return {"loss": loss, "accuracy": acc}


def _pair_datasets(items: Sequence[str]):
    missing, pairs = [], {}
    for item in items:
        parts = item.split(",")
        if len(parts) != 2:
            raise CliError(f"--datasets entries are TRAIN,TEST container pairs, got {item!r}")
        missing += [p for p in parts if not Path(p).is_file()]
    if missing:
        return None, missing
    for item in items:
        tr, te = item.split(",")
        modes = {read_header(tr)["mode"], read_header(te)["mode"]}
        if len(modes) != 1:
            raise CliError(f"{tr} and {te} hold different dataset modes")
        mode = modes.pop()
        if mode in pairs:
            raise CliError(f"two dataset pairs for mode {mode}")
        pairs[mode] = (tr, te)
    return pairs, []


def cmd_report(args, outputs: Outputs) -> dict:
    from .plots import plot_curves, plot_report
    from .report import MODE_LABELS, MODEL_LABELS, check_complete, run_table

    missing = [p for p in args.ckpts if not Path(p).is_file()]
    pairs, missing_data = _pair_datasets(args.datasets)
    missing += missing_data
    if missing:
        raise CliError("missing inputs: " + ", ".join(missing))
    backbones = {}
    for p in args.ckpts:
        store = _load_backbone(p)
        if store.spec.variant in backbones:
            raise CliError(f"two checkpoints for variant {store.spec.variant}")
        backbones[store.spec.variant] = store
    if not args.partial:
        try:
            check_complete(backbones, pairs)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    datasets = {m: (read_container(tr), read_container(te)) for m, (tr, te) in pairs.items()}
    cfg = TrainConfig.video_defaults(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                                     repetitions=args.repetitions, seed=args.seed)
    report, results = run_table(backbones, datasets, cfg, complete=not args.partial, progress=print)
    out = Path(args.out)
    outputs.write_text(out.with_suffix(".tsv"), report.to_tsv())
    outputs.write_text(out.with_suffix(".txt"), report.to_text())
    report.save(out.with_suffix(".atvc"))
    outputs.write_bytes(out.with_suffix(".atvc"), out.with_suffix(".atvc").read_bytes())
    decode_named_tensors(out.with_suffix(".atvc").read_bytes())
    plot_report(report, out.with_suffix(".png"))
    outputs.add_file(out.with_suffix(".png"))
    curves = {f"{MODEL_LABELS[v]} / {MODE_LABELS[m]}": r.curves for (v, m), r in results.items()}
    plot_curves(curves, out.with_suffix(".curves.png"))
    outputs.add_file(out.with_suffix(".curves.png"))
    print(report.to_text(), end="")
    return {"cells": len(report), "manifest": out.with_suffix(".manifest")}


def parse_frames(text: str) -> List[int]:
    """'0..4' (inclusive range) or '0,2,3'."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            frames = list(range(int(lo), int(hi) + 1))
        else:
            frames = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"frames are 'A..B' or 'A,B,C', got {text!r}") from None
    if not frames or min(frames) < 0:
        raise argparse.ArgumentTypeError(f"no valid frames in {text!r}")
    return frames


def cmd_dump_stn(args, outputs: Outputs) -> dict:
    from .attention import stn_forward
    from .plots import plot_pairs
    from .tensor import Tensor, no_grad

    store = _load_backbone(args.ckpt)
    if store.spec.variant != "stn":
        raise CliError(f"{args.ckpt} is a {store.spec.variant} checkpoint; dump-stn needs an stn one")
    data = read_container(args.data)
    if not 0 <= args.sequence < len(data):
        raise CliError(f"sequence {args.sequence} out of range (dataset has {len(data)})")
    frames = parse_frames(args.frames) if isinstance(args.frames, str) else args.frames
    if max(frames) >= data.frames.shape[1]:
        raise CliError(f"frame {max(frames)} out of range (sequences have {data.frames.shape[1]} frames)")
    video = data.float_frames()[args.sequence, frames]
    with no_grad():
        warped = stn_forward(Tensor(video[:, None]), store).data[:, 0]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, src, dst in zip(frames, video, warped):
        for name, img in ((f"input_{t:03d}.pgm", src), (f"stn_{t:03d}.pgm", dst)):
            write_pgm(out_dir / name, img)
            outputs.add_file(out_dir / name)
    plot_pairs(list(video), list(np.clip(warped, 0, 1)), out_dir / "stn_pairs.png")
    outputs.add_file(out_dir / "stn_pairs.png")
    print(f"wrote {len(frames)} input/output pairs to {out_dir}")
    return {"manifest": out_dir / "dump-stn.manifest"}


def cmd_elastic(args, outputs: Outputs) -> dict:
    from .plots import plot_pairs

    params = ElasticParams(sigma=args.sigma, kernel=args.ksize, alpha=args.alpha)
    src = read_container(args.input)
    out = elastic_dataset(src, params, args.seed)
    outputs.write_bytes(args.out, encode_container(out))
    decode_container(Path(args.out).read_bytes())
    fig = Path(args.out).with_suffix(".preview.png")
    plot_pairs(list(src.frames[0]), list(out.frames[0]), fig, titles=("input", "deformed"))
    outputs.add_file(fig)
    changed = float((src.frames != out.frames).mean())
    print(f"deformed {len(out)} sequences (sigma {args.sigma}, kernel {args.ksize}, alpha {args.alpha}); "
          f"{100 * changed:.1f}% of pixels changed")
    return {"changed_fraction": changed}


def cmd_params(args, outputs: Outputs) -> dict:
    spec = ModelSpec.profile(args.profile, args.variant)
    total = 0
    for layer, n in param_ledger(spec):
        print(f"{layer:<16}{n:>14,}")
        total += n
    print(f"{'total':<16}{total:>14,}")
    return {"total": total, "no_manifest": True}


def cmd_replay(args) -> int:
    manifest = read_manifest(args.manifest)
    if "argv" not in manifest:
        raise CliError(f"{args.manifest} has no argv line")
    recorded = dict(zip(manifest.get("output", []), manifest.get("output_crc32", [])))
    code = main(shlex.split(manifest["argv"][0]))
    if code != 0 or not args.check:
        return code
    bad = []
    for name, crc in recorded.items():
        actual = f"{zlib.crc32(Path(name).read_bytes()):08x}" if Path(name).is_file() else "missing"
        if actual != crc:
            bad.append(f"{name} ({actual} != {crc})")
    if bad:
        print("replay differs: " + "; ".join(bad), file=sys.stderr)
        return 1
    print(f"replay reproduced {len(recorded)} output(s) bit-exactly")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidattn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fetch-mnist", help="write the bundled 10k-digit MNIST subset as IDX files")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fetch_mnist)

    s = sub.add_parser("gen", help="generate an augmented Moving MNIST container")
    s.add_argument("--mode", choices=MODES, default="normal")
    s.add_argument("--split", choices=SPLITS, default="train")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--mnist-dir", required=True)
    s.add_argument("--label-order", choices=LABEL_ORDERS, default="sampled")
    s.add_argument("--sequences-per-class", type=int, default=10)
    s.add_argument("--frames", type=int, default=5)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("pretrain", help="pre-train a backbone on Scaled MNIST")
    s.add_argument("--variant", choices=VARIANTS, required=True)
    s.add_argument("--profile", choices=("full", "reduced"), default="reduced")
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--lr", type=float, default=1.0)
    s.add_argument("--loc-lr-scale", type=float, default=0.1, help="step multiplier for the STN localization net")
    s.add_argument("--train-images", type=int, default=10000)
    s.add_argument("--test-images", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mnist-dir", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("train", help="train LSTMs on frozen backbone features")
    s.add_argument("--backbone-ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--test-data")
    s.add_argument("--variant", choices=VARIANTS, help="check the checkpoint against this variant")
    s.add_argument("--profile", choices=("full", "reduced"), help="profile for --variant (default reduced)")
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--batch-size", type=int, default=50)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a backbone + LSTM pair on a dataset")
    s.add_argument("--backbone-ckpt", required=True)
    s.add_argument("--lstm-ckpt")
    s.add_argument("--uniform-baseline", action="store_true", help="score a uniform predictor instead")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="train and evaluate the backbone x mode grid")
    s.add_argument("--ckpts", nargs="+", required=True)
    s.add_argument("--datasets", nargs="+", required=True, metavar="TRAIN,TEST")
    s.add_argument("--partial", action="store_true", help="allow an incomplete grid")
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--batch-size", type=int, default=50)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("dump-stn", help="write input and STN-output frames as PGM")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--sequence", type=int, default=0)
    s.add_argument("--frames", type=parse_frames, default=[0, 1, 2, 3, 4])
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_dump_stn)

    s = sub.add_parser("elastic", help="elastically deform every frame of a container")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--sigma", type=float, default=10.0)
    s.add_argument("--ksize", type=int, default=7)
    s.add_argument("--alpha", type=float, default=300.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_elastic)

    s = sub.add_parser("params", help="print the per-layer parameter ledger")
    s.add_argument("--variant", choices=VARIANTS, required=True)
    s.add_argument("--profile", choices=("full", "reduced"), default="full")
    s.set_defaults(func=cmd_params)

    s = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    s.add_argument("manifest")
    s.add_argument("--check", action="store_true", help="compare outputs with the recorded CRC-32")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        started = time.perf_counter()
        outputs = Outputs()
        extra = args.func(args, outputs) or {}
        if extra.pop("no_manifest", False):
            return 0
        manifest = extra.pop("manifest", None) or _manifest_path(args.out)
        if args.command == "dump-stn":
            args.frames = ",".join(map(str, args.frames))
        write_manifest(manifest, args.command, args, outputs, started, extra)
    except (CliError, FormatError, IdxError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
