"""Planted-feature check: a teacher that only sees the left half of 16x32
images, explained by re-label distillation and by occlusion.

Each image is two independent shapes side by side and the label comes from
the left one.  Prints the share of top-quartile saliency mass that lands on
the left half, per anchor.

    python3 scripts/run_planted.py --anchors 10 --save-dir runs/planted
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from relabel_distill.dataio import write_pgm  # noqa: E402
from relabel_distill.explain import ExplainConfig, explain  # noqa: E402
from relabel_distill.metrics import occlusion_saliency, top_fraction_mass  # noqa: E402
from relabel_distill.numkit import Rng  # noqa: E402
from relabel_distill.teacher import TeacherConfig, accuracy  # noqa: E402
from relabel_distill.vae import VaeConfig, train_vae  # noqa: E402
from tests.models import left_half_mask, left_only_teacher, paired_shapes  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--anchors", type=int, default=10)
    ap.add_argument("--save-dir")
    args = ap.parse_args()

    train = paired_shapes(2000, args.seed, 10)
    test = paired_shapes(args.anchors, args.seed, 20)
    teacher = left_only_teacher(train, TeacherConfig(), Rng(args.seed, 2))
    vae = train_vae(train, VaeConfig(), Rng(args.seed, 3))
    print(f"teacher accuracy {accuracy(teacher, train):.4f}, vae loss {vae.final_loss:.3f}")

    left = left_half_mask(16, 32)
    shares = []
    for i in range(args.anchors):
        x = test.images[i]
        _, saliency, nb = explain(teacher, vae, x, ExplainConfig(), Rng(args.seed, 100 + i))
        occ = occlusion_saliency(teacher, x)
        shares.append((top_fraction_mass(saliency, left), top_fraction_mass(occ, left)))
        print(f"anchor {i} counts {nb.class_counts()} relabel {shares[-1][0]:.3f} occlusion {shares[-1][1]:.3f}")
        if args.save_dir:
            out = Path(args.save_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_pgm(x[..., 0], out / f"image_{i}.pgm")
            write_pgm(saliency.normalized, out / f"relabel_{i}.pgm")
            write_pgm(occ.normalized, out / f"occlusion_{i}.pgm")
    r, o = np.array(shares).T
    print(f"relabel min {r.min():.3f} mean {r.mean():.3f}; occlusion min {o.min():.3f} mean {o.mean():.3f}")


if __name__ == "__main__":
    main()
