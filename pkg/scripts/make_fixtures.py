#!/usr/bin/env python3
"""Regenerate the checked-in RVL1 fixture pair used by the CLI tests.

The prediction is the label with one instance dropped and one false blob
added, lifted to soft probabilities 0.875/0.125 (both exactly
representable in f32, so the file round-trips bit-exactly).
"""

from pathlib import Path

import numpy as np

from iciseg import BlobSpec, Shape, Volume, corrupt, generate, write_volume_file

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    shape = Shape((16, 16, 16))
    label, cc = generate(shape, BlobSpec(count=(3, 3), radius=(1, 2), seed=20240501))
    pred_mask = corrupt(label, drop_instances=1, add_false=1, seed=20240502)
    soft = np.where(pred_mask.data > 0, 0.875, 0.125)
    write_volume_file(OUT / "label_16.rvl", label)
    write_volume_file(OUT / "pred_16.rvl", Volume(shape, soft))
    print(f"wrote fixtures under {OUT} (label instances: {cc.num_instances})")


if __name__ == "__main__":
    main()
