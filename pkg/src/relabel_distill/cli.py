"""Command-line entry point.

Subcommands: ``synth-data``, ``train-teacher``, ``train-vae``, ``explain``,
``eval``.  Exit codes: 0 success, 1 training/internal failure, 2 usage or
input error.  Every command is a pure function of its flags, input files and
``--seed``.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, metrics
from .explain import ExplainConfig, LinearStudent, SaliencyMap, explain, summary_text
from .numkit import Rng, TrainingError, UsageError
from .teacher import TeacherConfig, TeacherModel, train_teacher
from .vae import VaeConfig, VaeModel, train_vae

# stream ids for Rng(seed, stream)
STREAM_DATA = 0
STREAM_TEACHER = 1
STREAM_VAE = 2
STREAM_EXPLAIN = 1 << 20
STREAM_RANDOM = 1 << 21


class InputError(Exception):
    """Bad flags or unusable input files (exit code 2)."""


@dataclass
class RunConfig:
    seed: int = 0
    idx_images: str | None = None
    idx_labels: str | None = None
    synth: tuple[int, int, int, int] | None = None
    synth_seed: int | None = None
    latent_dim: int = 16
    tau: float = 1.0
    n_samples: int = 1000
    lambda1: float = 0.7
    lambda2: float = 0.3
    step_fraction: float = 0.02
    baseline_value: float = 0.0
    out_dir: str = "."

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InputError("--lambda1 and --lambda2 must be non-negative")
        if self.n_samples < 2:
            raise InputError("--n-samples must be at least 2")
        if self.tau < 0:
            raise InputError("--tau must be non-negative")
        if not 0 < self.step_fraction <= 1:
            raise InputError("--step-fraction must be in (0, 1]")

    def explain_config(self) -> ExplainConfig:
        return ExplainConfig(
            n_samples=self.n_samples, tau=self.tau, lambda1=self.lambda1, lambda2=self.lambda2
        )


def _parse_synth(text: str) -> tuple[int, int, int, int]:
    try:
        n, h, w, k = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--synth expects n,h,w,k, got {text!r}") from None
    return n, h, w, k


def _parse_indices(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-"))
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    return out


def load_dataset(cfg: RunConfig) -> dataio.ImageDataset:
    if cfg.idx_images or cfg.idx_labels:
        if not (cfg.idx_images and cfg.idx_labels):
            raise InputError("--idx-images and --idx-labels must be given together")
        for path in (cfg.idx_images, cfg.idx_labels):
            if not Path(path).is_file():
                raise InputError(f"no such file: {path}")
        return dataio.load_idx(cfg.idx_images, cfg.idx_labels)
    if cfg.synth is None:
        raise InputError("no data source: pass --synth n,h,w,k or --idx-images/--idx-labels")
    n, h, w, k = cfg.synth
    seed = cfg.seed if cfg.synth_seed is None else cfg.synth_seed
    return dataio.synth_shapes(n, h, w, k, Rng(seed, STREAM_DATA))


def _out(cfg: RunConfig, name: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _print_epoch(epoch: int, loss: float) -> None:
    print(f"epoch {epoch} loss {loss:.6f}")


def cmd_train(kind: str, cfg: RunConfig, args) -> int:
    dataset = load_dataset(cfg)
    if kind == "teacher":
        tcfg = TeacherConfig(epochs=args.epochs if args.epochs is not None else TeacherConfig.epochs)
        model = train_teacher(dataset, tcfg, Rng(cfg.seed, STREAM_TEACHER), verbose=_print_epoch)
        print(f"train accuracy {model.train_accuracy:.6f}")
        path = _out(cfg, args.output or "teacher.rldm")
    else:
        vcfg = VaeConfig(latent_dim=cfg.latent_dim)
        if args.epochs is not None:
            vcfg.epochs = args.epochs
        model = train_vae(dataset, vcfg, Rng(cfg.seed, STREAM_VAE), verbose=_print_epoch)
        path = _out(cfg, args.output or "vae.rldm")
    dataio.save_model(model.to_archive(), path)
    print(f"wrote {path}")
    return 0


def _load_models(teacher_path, vae_path=None):
    teacher = TeacherModel.from_archive(dataio.load_model(teacher_path))
    vae = VaeModel.from_archive(dataio.load_model(vae_path)) if vae_path else None
    return teacher, vae


def _check_index(dataset, index: int) -> None:
    if not 0 <= index < len(dataset):
        raise InputError(f"image index {index} outside dataset of {len(dataset)} images")


def _explain_one(cfg, teacher, vae, dataset, index):
    return explain(teacher, vae, dataset.images[index], cfg.explain_config(), Rng(cfg.seed, STREAM_EXPLAIN + index))


def cmd_explain(cfg: RunConfig, args) -> int:
    dataset = load_dataset(cfg)
    _check_index(dataset, args.index)
    teacher, vae = _load_models(args.teacher, args.vae)
    student, saliency, nb = _explain_one(cfg, teacher, vae, dataset, args.index)
    stem = f"saliency_{args.index}"
    dataio.write_pgm(saliency.normalized, _out(cfg, stem + ".pgm"))
    dataio.save_model(student.to_archive(), _out(cfg, stem + ".rldm"))
    text = summary_text(nb, student)
    _out(cfg, f"summary_{args.index}.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def format_table(rows) -> str:
    header = ("method", "deletion_auc", "insertion_auc")
    body = [(m, f"{d:.6f}", f"{i:.6f}") for m, d, i in rows]
    widths = [max(len(r[c]) for r in [header, *body]) for c in range(3)]
    lines = [
        "  ".join(cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c]) for c, cell in enumerate(r))
        for r in [header, *body]
    ]
    return "\n".join(lines) + "\n"


def cmd_eval(cfg: RunConfig, args) -> int:
    dataset = load_dataset(cfg)
    indices = _parse_indices(args.indices)
    if not indices:
        raise InputError("--indices selected no images")
    for index in indices:
        _check_index(dataset, index)
    if args.vae is None and args.saliency_dir is None:
        raise InputError("eval needs --vae or --saliency-dir for the re-label distillation maps")
    teacher, vae = _load_models(args.teacher, args.vae)

    scores = {m: [] for m in metrics.METHODS}
    for index in indices:
        x = dataset.images[index]
        if args.saliency_dir is not None:
            path = Path(args.saliency_dir) / f"saliency_{index}.rldm"
            student = LinearStudent.from_archive(dataio.load_model(path))
            saliency = SaliencyMap.from_weights(student.w, dataset.image_shape)
        else:
            _, saliency, _ = _explain_one(cfg, teacher, vae, dataset, index)
        curves = metrics.compare_methods(
            teacher, x, saliency.ordering, Rng(cfg.seed, STREAM_RANDOM + index),
            args.window, args.stride, cfg.step_fraction, cfg.baseline_value,
        )
        for method, (dele, ins) in curves.items():
            scores[method].append((dele.auc, ins.auc))
        dele, ins = curves["relabel"]
        dataio.write_curve_csv(dele.points, _out(cfg, f"deletion_{index}.csv"))
        dataio.write_curve_csv(ins.points, _out(cfg, f"insertion_{index}.csv"))
    rows = [(m, *np.mean(v, axis=0)) for m, v in scores.items()]
    table = format_table(rows)
    _out(cfg, "summary.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_synth_data(cfg: RunConfig, args) -> int:
    if cfg.synth is None:
        raise InputError("synth-data needs --synth n,h,w,k")
    dataset = load_dataset(cfg)
    prefix = args.prefix
    images, labels = _out(cfg, f"{prefix}-images.idx"), _out(cfg, f"{prefix}-labels.idx")
    dataio.write_idx(dataset, images, labels)
    print(f"wrote {images} and {labels}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--idx-images")
    common.add_argument("--idx-labels")
    common.add_argument("--synth", type=_parse_synth, metavar="N,H,W,K")
    common.add_argument("--synth-seed", type=int, help="seed for --synth data (default: --seed)")
    common.add_argument("--latent-dim", type=int, default=16)
    common.add_argument("--tau", type=float, default=1.0)
    common.add_argument("--n-samples", type=int, default=1000)
    common.add_argument("--lambda1", type=float, default=0.7)
    common.add_argument("--lambda2", type=float, default=0.3)
    common.add_argument("--step-fraction", type=float, default=0.02)
    common.add_argument("--baseline", type=float, default=0.0)
    common.add_argument("--out-dir", default=".")

    parser = argparse.ArgumentParser(prog="relabel-distill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", parents=[common], help="write a procedural shapes dataset as IDX")
    p.add_argument("--prefix", default="shapes")

    for name in ("train-teacher", "train-vae"):
        p = sub.add_parser(name, parents=[common], help=f"train and save the {name[6:]}")
        p.add_argument("--epochs", type=int)
        p.add_argument("--output", help="archive file name inside --out-dir")

    p = sub.add_parser("explain", parents=[common], help="explain one image")
    p.add_argument("--teacher", required=True)
    p.add_argument("--vae", required=True)
    p.add_argument("--index", type=int, required=True)

    p = sub.add_parser("eval", parents=[common], help="deletion/insertion evaluation")
    p.add_argument("--teacher", required=True)
    p.add_argument("--vae")
    p.add_argument("--saliency-dir")
    p.add_argument("--indices", required=True, help="comma list, ranges allowed: 0-19")
    p.add_argument("--window", type=int, default=3, help="occlusion window (odd)")
    p.add_argument("--stride", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig(
            seed=args.seed,
            idx_images=args.idx_images,
            idx_labels=args.idx_labels,
            synth=args.synth,
            synth_seed=args.synth_seed,
            latent_dim=args.latent_dim,
            tau=args.tau,
            n_samples=args.n_samples,
            lambda1=args.lambda1,
            lambda2=args.lambda2,
            step_fraction=args.step_fraction,
            baseline_value=args.baseline,
            out_dir=args.out_dir,
        )
        if args.command == "synth-data":
            return cmd_synth_data(cfg, args)
        if args.command in ("train-teacher", "train-vae"):
            return cmd_train(args.command[6:], cfg, args)
        if args.command == "explain":
            return cmd_explain(cfg, args)
        return cmd_eval(cfg, args)
    except (InputError, dataio.DataFormatError, UsageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
