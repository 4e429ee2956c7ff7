#!/usr/bin/env python3
"""Desk-scale comparison: instance-aware compound vs plain overlap loss.

Generates multi-blob labels, gradient-descends per-voxel logits under each
loss configuration, and prints final-state metrics plus their rank table.
At the default learning rate the effect is stark: the compound suppresses
false-positive blobs and resolves every instance, while the plain overlap
loss is still crawling (its gradients scale with the inverse volume).

Example:
    python3 scripts/run_comparison.py --cases 5 --steps 150 --lr 2000
"""

import argparse
import sys

from iciseg import BlobSpec, LossConfig, RunSpec, Shape, compare, generate


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=5, help="label/seed pairs")
    ap.add_argument("--shape", default="48,48,48")
    ap.add_argument("--blobs", type=int, default=5)
    ap.add_argument("--radius", default="2,6")
    ap.add_argument("--lr", type=float, default=2000.0)
    ap.add_argument("--steps", type=int, default=150)
    ap.add_argument("--seed", type=int, default=12345, help="base seed")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--with-blob-baseline", action="store_true",
                    help="also train the blob-loss baseline (slower)")
    args = ap.parse_args(argv)

    shape = Shape(tuple(int(x) for x in args.shape.split(",")))
    r = tuple(int(x) for x in args.radius.split(","))

    labels, seeds = [], []
    for k in range(args.cases):
        label, cc = generate(shape, BlobSpec(count=(args.blobs, args.blobs),
                                             radius=(r[0], r[-1]),
                                             seed=args.seed + k))
        print(f"case {k}: {cc.num_instances} instances, "
              f"{label.num_foreground} fg voxels", file=sys.stderr)
        labels.append(label)
        seeds.append(args.seed + 1000 + k)

    specs = [
        RunSpec("compound(a=1,b=1,c=1)", LossConfig(a=1, b=1, c=1)),
        RunSpec("compound(1/4,1/2,1/4)", LossConfig(a=0.25, b=0.5, c=0.25)),
        RunSpec("overlap-only(a=1)", LossConfig(a=1, b=0, c=0)),
    ]
    if args.with_blob_baseline:
        specs.append(RunSpec("blob-baseline(2,1)",
                             LossConfig(alpha=2.0, beta=1.0), family="blob"))

    rep = compare(labels, specs, lr=args.lr, steps=args.steps, seeds=seeds,
                  threads=args.threads, paired=True)
    sys.stdout.write(rep.table.to_csv())
    for si, name in enumerate(rep.spec_names):
        agg = rep.aggregates[si]
        print(f"{name}: mean DSC {agg['mean_dsc']:.4f}  "
              f"mean missed {agg['mean_missed']:.2f}  "
              f"mean false {agg['mean_false']:.2f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
