"""Desk-scale optimization demo: plain gradient descent directly on a
per-voxel logit volume (no network), tracing loss components and
instance metrics so loss configurations can be compared.

Each run is a pure function of (label, config, lr, steps, seed). Runs may
execute in parallel across seeds/configs; aggregation happens in a fixed
order so reports are bit-identical for any worker count.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diffgraph import Tape
from .errors import NonFiniteLoss, NonFiniteValue
from .labeling import label_components_exact, label_components_maxpool
from .losses import (CompoundLossResult, LossConfig, blob_compound_loss,
                     dici_loss, ici_loss)
from .metrics import RankTable, evaluate_from_labelings, rank_table
from .synth import Xoshiro256StarStar
from .volume import BinaryMask, Volume, threshold

FAMILIES = ("ici", "dici", "blob")

_INIT_SCALE = 0.1  # keeps early probabilities near 0.5, stressing the CCA path


@dataclass(frozen=True)
class RunSpec:
    """A named loss configuration to train with."""

    name: str
    cfg: LossConfig
    family: str = "ici"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")


@dataclass
class TraceEntry:
    step: int
    total: float
    components: dict[str, float]
    dsc: float
    missed: int
    false: int


@dataclass
class TrainRun:
    label: BinaryMask
    cfg: LossConfig
    family: str
    lr: float
    steps: int
    seed: int
    trace: list[TraceEntry] = field(default_factory=list)
    logits: np.ndarray = None  # final state

    @property
    def final(self) -> TraceEntry:
        return self.trace[-1]


def _compound(label: BinaryMask, p_ref, cfg: LossConfig, family: str,
              cc_label=None) -> CompoundLossResult:
    if family == "ici":
        return ici_loss(label, p_ref, cfg, cc_label=cc_label)
    if family == "dici":
        return dici_loss(label, p_ref, cfg, cc_label=cc_label)
    return blob_compound_loss(label, p_ref, cfg, cc_label=cc_label)


def run(label: BinaryMask, cfg: LossConfig, lr: float, steps: int, seed: int,
        family: str = "ici") -> TrainRun:
    """Gradient-descend sigmoid(logits) against ``label``; trace length is
    steps+1 (entry 0 is the initial state)."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    n = label.shape.num_voxels
    rng = Xoshiro256StarStar(seed)
    logits = rng.normal_array(n, 0.0, _INIT_SCALE)
    cc_label_eval = label_components_exact(label)
    # the label never changes, so its labeling is computed once and reused
    if cfg.cca_backend == "exact":
        cc_label_loss = cc_label_eval
    else:
        cc_label_loss = label_components_maxpool(label, cfg.cca_config())

    out = TrainRun(label=label, cfg=cfg, family=family, lr=lr, steps=steps,
                   seed=seed)
    for k in range(steps + 1):
        tape = Tape()
        x = tape.input(logits)
        p = tape.sigmoid(x)
        try:
            res = _compound(label, p, cfg, family, cc_label=cc_label_loss)
        except NonFiniteValue as e:
            raise NonFiniteLoss(
                f"non-finite loss at step {k} (family={family}, seed={seed}): {e}"
            ) from e

        pred_mask = threshold(Volume(label.shape, p.values.copy()), cfg.tau)
        if family != "blob" and cfg.cca_backend == "exact" and res.cc_output is not None:
            cc_pred = res.cc_output
        else:
            cc_pred = label_components_exact(pred_mask)
        m = evaluate_from_labelings(label, pred_mask, cc_label_eval, cc_pred)
        out.trace.append(TraceEntry(
            step=k,
            total=res.total.value,
            components=res.component_values(),
            dsc=m.dsc,
            missed=m.missed_instances,
            false=m.false_instances,
        ))
        if k < steps:
            grad = tape.backward(res.total, [x])[0]
            logits = logits - lr * grad
    out.logits = logits
    return out


def trace_to_csv(tr: TrainRun) -> str:
    """Per-step CSV: step, one L_* column per component, total, DSC, MI, FI."""
    comp_names = list(tr.trace[0].components.keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + [f"L_{c}" for c in comp_names] + ["total", "DSC", "MI", "FI"])
    for e in tr.trace:
        w.writerow([e.step] + [repr(e.components[c]) for c in comp_names]
                   + [repr(e.total), repr(e.dsc), e.missed, e.false])
    return buf.getvalue()


# -- configuration comparison -------------------------------------------------


@dataclass
class ComparisonReport:
    """Final-step metrics aggregated per configuration, plus their ranks."""

    spec_names: list[str]
    aggregates: list[dict]  # one dict per spec: mean dsc/missed/false
    finals: dict = field(default_factory=dict)  # (spec_i, case_i) -> TraceEntry
    table: RankTable = None

    def to_dict(self) -> dict:
        return {
            "specs": self.spec_names,
            "aggregates": self.aggregates,
            "rank_table": self.table.to_dict(),
        }


def _run_job(args):
    label, cfg, family, lr, steps, seed = args
    tr = run(label, cfg, lr, steps, seed, family)
    return tr.final


def compare(labels, specs, lr: float, steps: int, seeds, threads: int = 1,
            paired: bool = False) -> ComparisonReport:
    """Train every spec on every case and rank the aggregate outcomes.

    Cases are labels x seeds, or zip(labels, seeds) when ``paired`` is set.
    Jobs may run in parallel (``threads`` worker processes); results are
    keyed by job index and reduced sequentially, so the report does not
    depend on the worker count.
    """
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("compare needs at least two configurations")
    if paired:
        if len(labels) != len(seeds):
            raise ValueError("paired mode needs one seed per label")
        cases = list(zip(labels, seeds))
    else:
        cases = [(lab, s) for lab in labels for s in seeds]

    jobs = []
    for si, spec in enumerate(specs):
        for ci, (lab, seed) in enumerate(cases):
            jobs.append((si, ci, (lab, spec.cfg, spec.family, lr, steps, seed)))

    results = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for (si, ci, _), final in zip(jobs, pool.map(_run_job,
                                                         [j[2] for j in jobs])):
                results[(si, ci)] = final
    else:
        for si, ci, args in jobs:
            results[(si, ci)] = _run_job(args)

    aggregates = []
    for si in range(len(specs)):
        finals = [results[(si, ci)] for ci in range(len(cases))]
        aggregates.append({
            "mean_dsc": float(np.mean([f.dsc for f in finals])),
            "mean_missed": float(np.mean([f.missed for f in finals])),
            "mean_false": float(np.mean([f.false for f in finals])),
        })
    values = [[a["mean_dsc"], a["mean_missed"], a["mean_false"]]
              for a in aggregates]
    table = rank_table(values, ["up", "down", "down"],
                       rows=[s.name for s in specs],
                       cols=["DSC", "MI", "FI"])
    return ComparisonReport(
        spec_names=[s.name for s in specs],
        aggregates=aggregates,
        finals=results,
        table=table,
    )
