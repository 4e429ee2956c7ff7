"""Command-line front end.

Subcommands: loss, metrics, cca, gradcheck, synth, train-demo, rank,
sweep-delta. Stdout carries exactly one JSON document or CSV table per
invocation (per --format); everything else goes to stderr. Exit codes:
0 success, 1 failed check (gradcheck over tolerance), 2 usage/I-O errors.

All randomized subcommands require an explicit --seed; there is no
wall-clock seeding anywhere.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time

import numpy as np

from . import diffgraph, losses, metrics, optim, synth
from .errors import EvenCubeSize, IcisegError
from .labeling import CcaConfig, label_components_exact, label_components_maxpool
from .volume import (BinaryMask, Shape, Volume, mask_to_volume,
                     read_volume_file, write_volume_file)

SCHEMA_PREFIX = "iciseg"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit_json(obj: dict) -> None:
    print(json.dumps(obj))


def _resolve_format(args, default: str, supported: tuple[str, ...]) -> str:
    fmt = args.format or default
    if fmt not in supported:
        raise IcisegError(
            f"{args.command}: --format {fmt} not supported here "
            f"(supported: {', '.join(supported)})")
    return fmt


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip() != "")


def _read_mask(path) -> BinaryMask:
    v = read_volume_file(path)
    if not isinstance(v, BinaryMask):
        raise IcisegError(f"{path}: expected a u8 mask file")
    return v


def _read_prediction(path) -> Volume:
    v = read_volume_file(path)
    if isinstance(v, BinaryMask):
        return mask_to_volume(v)
    return v


def _add_loss_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--a", type=float, default=1.0, help="global-term weight")
    p.add_argument("--b", type=float, default=1.0, help="instance-term weight")
    p.add_argument("--c", type=float, default=1.0,
                   help="center weight (three-part) / predicted-side weight (dual)")
    p.add_argument("--d", type=float, default=0.0, help="center weight (dual compound)")
    p.add_argument("--alpha", type=float, default=2.0, help="blob baseline global weight")
    p.add_argument("--beta", type=float, default=1.0, help="blob baseline instance weight")
    p.add_argument("--delta", type=int, default=7, help="center cube edge (odd)")
    p.add_argument("--tau", type=float, default=0.5, help="binarization threshold")
    p.add_argument("--sigma", type=float, default=1e-5, help="smoothing constant")
    p.add_argument("--base-loss", choices=losses.BASE_LOSSES, default="dice")
    p.add_argument("--gamma", type=float, default=2.0, help="focal exponent")
    p.add_argument("--variant", choices=losses.INSTANCE_VARIANTS, default="standard")
    p.add_argument("--center-fill", choices=losses.CENTER_FILLS,
                   default="instance_mean_prob")
    p.add_argument("--cca-backend", choices=losses.CCA_BACKENDS, default="exact")
    p.add_argument("--iterations", type=int, default=None,
                   help="max-pool iteration budget (default: sum of dims)")


def _cfg_from_args(args, delta: int | None = None) -> losses.LossConfig:
    return losses.LossConfig(
        a=args.a, b=args.b, c=args.c, d=args.d,
        alpha=args.alpha, beta=args.beta,
        delta=delta if delta is not None else args.delta,
        tau=args.tau, sigma=args.sigma,
        base_loss=args.base_loss, gamma=args.gamma,
        instance_variant=args.variant, center_fill=args.center_fill,
        cca_backend=args.cca_backend, maxpool_iterations=args.iterations,
    )


def _compound(label, pred, cfg, family):
    if family == "ici":
        return losses.ici_loss(label, pred, cfg)
    if family == "dici":
        return losses.dici_loss(label, pred, cfg)
    return losses.blob_compound_loss(label, pred, cfg)


# -- subcommands -------------------------------------------------------------


def cmd_loss(args) -> int:
    _resolve_format(args, "json", ("json",))
    label = _read_mask(args.label)
    pred = _read_prediction(args.pred)
    cfg = _cfg_from_args(args)
    t0 = time.perf_counter()
    res = _compound(label, pred, cfg, args.family)
    elapsed = time.perf_counter() - t0
    out = {
        "schema": f"{SCHEMA_PREFIX}.loss/1",
        "family": args.family,
        "components": res.component_values(),
        "total": res.total.value,
        "n_label_instances": res.cc_label.num_instances if res.cc_label else None,
        "n_output_instances": res.cc_output.num_instances if res.cc_output else None,
        "elapsed_s": elapsed,
    }
    _emit_json(out)
    return 0


def cmd_metrics(args) -> int:
    fmt = _resolve_format(args, "json", ("json", "csv"))
    label = _read_mask(args.label)
    pred = _read_mask(args.pred)
    report = metrics.evaluate_pair(label, pred)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = report.to_dict()
        w.writerow(d.keys())
        w.writerow([repr(v) if isinstance(v, float) else v for v in d.values()])
        sys.stdout.write(buf.getvalue())
    else:
        _emit_json({"schema": f"{SCHEMA_PREFIX}.metrics/1", **report.to_dict()})
    return 0


def cmd_cca(args) -> int:
    _resolve_format(args, "json", ("json",))
    mask = _read_mask(args.mask)
    cca = CcaConfig(maxpool_iterations=args.iterations)
    t0 = time.perf_counter()
    if args.backend == "exact":
        cc = label_components_exact(mask, cca)
    else:
        cc = label_components_maxpool(mask, cca)
    elapsed = time.perf_counter() - t0
    out = {
        "schema": f"{SCHEMA_PREFIX}.cca/1",
        "backend": args.backend,
        "n_instances": cc.num_instances,
        "converged": cc.converged,
        "elapsed_s": elapsed,
        "instances": [
            {"id": inst.id, "size": inst.size,
             "center_of_mass": list(inst.center_of_mass)}
            for inst in cc.instances
        ],
    }
    _emit_json(out)
    return 0


def cmd_gradcheck(args) -> int:
    _resolve_format(args, "json", ("json",))
    shape = Shape(_parse_ints(args.shape))
    cfg = _cfg_from_args(args)
    label, pred = _gradcheck_pair(shape, args.seed, cfg.tau)

    def f(v):
        return _compound(label, v, cfg, args.family).total

    err = diffgraph.finite_diff_check(f, pred, h=args.h)
    passed = err < args.tolerance
    _emit_json({
        "schema": f"{SCHEMA_PREFIX}.gradcheck/1",
        "family": args.family,
        "shape": list(shape.dims),
        "seed": args.seed,
        "h": args.h,
        "max_rel_err": err,
        "tolerance": args.tolerance,
        "passed": passed,
    })
    return 0 if passed else 1


def _gradcheck_pair(shape: Shape, seed: int, tau: float,
                    margin: float = 1e-3) -> tuple[BinaryMask, Volume]:
    """Random label blobs and a random soft prediction whose voxels stay
    clear of the threshold by ``margin``, so finite differences never flip
    the discrete selectors."""
    small = min(shape.dims) < 8
    label, _ = synth.generate(shape, synth.BlobSpec(
        count=(1, 2) if small else (1, 3),
        radius=(1, 1) if small else (1, 2),
        seed=seed))
    rng = synth.Xoshiro256StarStar(seed ^ 0x5EED5EED)
    vals = np.empty(shape.num_voxels)
    for i in range(vals.size):
        u = 0.01 + 0.98 * rng.uniform()
        if abs(u - tau) <= margin:
            u = tau + margin * (1.5 if u >= tau else -1.5)
        vals[i] = u
    return label, Volume(shape, vals)


def cmd_synth(args) -> int:
    _resolve_format(args, "json", ("json",))
    shape = Shape(_parse_ints(args.shape))
    lo, hi = (args.count, args.count) if args.count_max is None \
        else (args.count, args.count_max)
    radius = _parse_ints(args.radius)
    spec = synth.BlobSpec(count=(lo, hi), radius=(radius[0], radius[-1]),
                          shape=args.blob_shape, min_separation=args.separation,
                          seed=args.seed)
    mask, cc = synth.generate(shape, spec)
    write_volume_file(args.out, mask)
    out = {
        "schema": f"{SCHEMA_PREFIX}.synth/1",
        "out": str(args.out),
        "n_instances": cc.num_instances,
        "foreground_voxels": mask.num_foreground,
    }
    if args.corrupt_out is not None:
        corrupted = synth.corrupt(mask, args.drop, args.add_false,
                                  seed=args.seed + 1)
        write_volume_file(args.corrupt_out, corrupted)
        out["corrupt_out"] = str(args.corrupt_out)
        out["corrupt_dropped"] = args.drop
        out["corrupt_added"] = args.add_false
    _emit_json(out)
    return 0


def cmd_train_demo(args) -> int:
    _resolve_format(args, "csv", ("csv",))
    label = _read_mask(args.label)
    cfg = _cfg_from_args(args)
    tr = optim.run(label, cfg, lr=args.lr, steps=args.steps, seed=args.seed,
                   family=args.family)
    text = optim.trace_to_csv(tr)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        _log(f"trace written to {args.out}")
        _log(f"final: total={tr.final.total!r} dsc={tr.final.dsc!r} "
             f"missed={tr.final.missed} false={tr.final.false}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_rank(args) -> int:
    fmt = _resolve_format(args, "json", ("json", "csv"))
    with open(args.table) as f:
        reader = csv.reader(f)
        rows = [r for r in reader if r]
    if len(rows) < 2:
        raise IcisegError("rank table needs a header and at least one row")
    header = rows[0]
    cols, directions = [], []
    for cell in header[1:]:
        name, _, direction = cell.rpartition(":")
        if direction not in ("up", "down") or not name:
            raise IcisegError(
                f"column header {cell!r} must look like 'name:up' or 'name:down'")
        cols.append(name)
        directions.append(direction)
    names = [r[0] for r in rows[1:]]
    values = [[float(c) for c in r[1:]] for r in rows[1:]]
    table = metrics.rank_table(values, directions, rows=names, cols=cols)
    if fmt == "json":
        _emit_json({"schema": f"{SCHEMA_PREFIX}.rank/1", **table.to_dict()})
    else:
        sys.stdout.write(table.to_csv())
    return 0


def cmd_sweep_delta(args) -> int:
    _resolve_format(args, "csv", ("csv",))
    label = _read_mask(args.label)
    pred = _read_prediction(args.pred)
    deltas = _parse_ints(args.deltas)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delta", "center", "total", "error"])
    for d in deltas:
        try:
            cfg = _cfg_from_args(args, delta=d)
            res = losses.ici_loss(label, pred, cfg)
            center = res.components["center"].value
            w.writerow([d, repr(center), repr(res.total.value), ""])
        except EvenCubeSize as e:
            w.writerow([d, "", "", str(e)])
    sys.stdout.write(buf.getvalue())
    return 0


# -- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="iciseg",
        description="Instance-aware segmentation losses, metrics, and demos "
                    "over RVL1 volumes.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=1,
                       help="worker budget for parallel sections (output is "
                            "independent of this)")
        p.add_argument("--format", choices=("json", "csv"), default=None)

    p = sub.add_parser("loss", help="compound loss components for a pair")
    p.add_argument("label")
    p.add_argument("pred")
    p.add_argument("--family", choices=optim.FAMILIES, default="ici")
    _add_loss_flags(p)
    common(p)
    p.set_defaults(fn=cmd_loss)

    p = sub.add_parser("metrics", help="evaluation metrics for a mask pair")
    p.add_argument("label")
    p.add_argument("pred")
    common(p)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("cca", help="connected components of a mask")
    p.add_argument("mask")
    p.add_argument("--backend", choices=("exact", "maxpool"), default="exact")
    p.add_argument("--iterations", type=int, default=None)
    common(p)
    p.set_defaults(fn=cmd_cca)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--shape", default="8,8,8")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--family", choices=optim.FAMILIES, default="ici")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    _add_loss_flags(p)
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic multi-blob mask")
    p.add_argument("--shape", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--count-max", type=int, default=None)
    p.add_argument("--radius", default="2,6")
    p.add_argument("--blob-shape", choices=("sphere", "cube"), default="sphere")
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--drop", type=int, default=0)
    p.add_argument("--add-false", type=int, default=0)
    p.add_argument("--corrupt-out", default=None)
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train-demo", help="gradient-descent demo on one label")
    p.add_argument("label")
    p.add_argument("--family", choices=optim.FAMILIES, default="ici")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    _add_loss_flags(p)
    common(p)
    p.set_defaults(fn=cmd_train_demo)

    p = sub.add_parser("rank", help="rank a metric table (CSV with name:up/"
                                    "name:down column headers)")
    p.add_argument("table")
    common(p)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("sweep-delta", help="center-term sweep over cube sizes")
    p.add_argument("label")
    p.add_argument("pred")
    p.add_argument("--deltas", default="3,5,7,11,15,31,63")
    _add_loss_flags(p)
    common(p)
    p.set_defaults(fn=cmd_sweep_delta)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (IcisegError, OSError, ValueError) as e:
        _log(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
