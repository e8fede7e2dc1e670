"""Deletion/insertion comparison of re-label, occlusion and random orderings
on the procedural shapes data.

    python3 scripts/run_faithfulness.py --seed 0 --k 2
    python3 scripts/run_faithfulness.py --seed 1 --k 3 --save-dir runs/k3

Defaults reproduce the pinned acceptance configuration.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from relabel_distill.dataio import synth_shapes, write_curve_csv, write_pgm
from relabel_distill.explain import ExplainConfig, explain
from relabel_distill.metrics import METHODS, compare_methods
from relabel_distill.numkit import Rng
from relabel_distill.teacher import TeacherConfig, accuracy, train_teacher
from relabel_distill.vae import VaeConfig, train_vae


def run(seed, k, n_train, n_test, size, vae_epochs, save_dir=None):
    start = time.perf_counter()
    train = synth_shapes(n_train, size, size, k, Rng(seed, 0))
    test = synth_shapes(n_test, size, size, k, Rng(seed, 1))
    teacher = train_teacher(train, TeacherConfig(), Rng(seed, 2))
    vae = train_vae(train, VaeConfig(epochs=vae_epochs), Rng(seed, 3))
    print(f"teacher train {teacher.train_accuracy:.4f} test {accuracy(teacher, test):.4f}")
    print(f"vae loss {vae.loss_history[0]:.3f} -> {vae.final_loss:.3f}")

    scores = {m: [] for m in METHODS}
    for i in range(n_test):
        x = test.images[i]
        student, saliency, nb = explain(teacher, vae, x, ExplainConfig(), Rng(seed, 100 + i))
        curves = compare_methods(teacher, x, saliency.ordering, Rng(seed, 1000 + i))
        for m, (dele, ins) in curves.items():
            scores[m].append((dele.auc, ins.auc))
        kept, shifted = nb.class_counts()
        print(
            f"image {i:2d} class {nb.anchor_class} kept/shifted {kept}/{shifted} "
            f"student acc {student.relabel_accuracy:.3f} "
            + " ".join(f"{m}={d:.3f}/{a:.3f}" for m, (d, a) in zip(METHODS, (s[-1] for s in scores.values())))
        )
        if save_dir is not None:
            out = Path(save_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_pgm(saliency.normalized, out / f"saliency_{i}.pgm")
            write_pgm(x[..., 0], out / f"image_{i}.pgm")
            write_curve_csv(curves["relabel"][0].points, out / f"deletion_{i}.csv")
            write_curve_csv(curves["relabel"][1].points, out / f"insertion_{i}.csv")

    print(f"\n{'method':<10}  {'deletion_auc':>12}  {'insertion_auc':>13}")
    for m, v in scores.items():
        d, a = np.mean(v, axis=0)
        print(f"{m:<10}  {d:>12.6f}  {a:>13.6f}")
    print(f"\n{time.perf_counter() - start:.1f}s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--n-test", type=int, default=20)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--vae-epochs", type=int, default=VaeConfig.epochs)
    ap.add_argument("--save-dir")
    args = ap.parse_args()
    run(args.seed, args.k, args.n_train, args.n_test, args.size, args.vae_epochs, args.save_dir)


if __name__ == "__main__":
    main()
