"""Instance-aware evaluation of prediction/label mask pairs, plus the
bracketed mean-rank protocol used to compare methods across metrics.

Instance matching uses the same rule as the losses: two instances match
when they overlap by at least one voxel. DSC of two empty masks is 1.0
(perfect-agreement convention) and volume difference is counted in voxels,
since there is no spacing metadata here.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeMismatch
from .labeling import ComponentLabeling, intersecting_instances, label_components_exact
from .volume import BinaryMask


@dataclass
class MetricReport:
    """Per-pair metric values."""

    dsc: float
    missed_instances: int
    false_instances: int
    lesionwise_f1: float
    simple_lesion_count: float
    volume_difference: float
    n_label_instances: int
    n_pred_instances: int

    def to_dict(self) -> dict:
        return {
            "dsc": self.dsc,
            "missed_instances": self.missed_instances,
            "false_instances": self.false_instances,
            "lesionwise_f1": self.lesionwise_f1,
            "simple_lesion_count": self.simple_lesion_count,
            "volume_difference": self.volume_difference,
            "n_label_instances": self.n_label_instances,
            "n_pred_instances": self.n_pred_instances,
        }


def evaluate_from_labelings(label: BinaryMask, pred: BinaryMask,
                            cc_label: ComponentLabeling,
                            cc_pred: ComponentLabeling) -> MetricReport:
    """Metric battery given precomputed labelings (both exact-backend)."""
    if label.shape != pred.shape:
        raise ShapeMismatch(f"{label.shape.dims} vs {pred.shape.dims}")
    sum_y = int(label.data.sum())
    sum_p = int(pred.data.sum())
    inter = int((label.data & pred.data).sum())
    if sum_y + sum_p == 0:
        dsc = 1.0
    else:
        dsc = 2.0 * inter / (sum_y + sum_p)

    missed = sum(1 for inst in cc_label.instances
                 if not intersecting_instances(cc_label, cc_pred, inst.id))
    false = sum(1 for inst in cc_pred.instances
                if not intersecting_instances(cc_pred, cc_label, inst.id))
    n = cc_label.num_instances
    m = cc_pred.num_instances
    tp = n - missed  # label instances with at least one predicted match
    denom = 2 * tp + false + missed
    f1 = 1.0 if denom == 0 else 2.0 * tp / denom
    return MetricReport(
        dsc=dsc,
        missed_instances=missed,
        false_instances=false,
        lesionwise_f1=f1,
        simple_lesion_count=float(abs(m - n)),
        volume_difference=float(abs(sum_p - sum_y)),
        n_label_instances=n,
        n_pred_instances=m,
    )


def evaluate_pair(label: BinaryMask, pred_mask: BinaryMask) -> MetricReport:
    """Full metric battery for one label/prediction mask pair."""
    if label.shape != pred_mask.shape:
        raise ShapeMismatch(f"{label.shape.dims} vs {pred_mask.shape.dims}")
    cc_label = label_components_exact(label)
    cc_pred = label_components_exact(pred_mask)
    return evaluate_from_labelings(label, pred_mask, cc_label, cc_pred)


def evaluate_batch(pairs: Sequence[tuple[BinaryMask, BinaryMask]]) \
        -> tuple[list[MetricReport], dict[str, float]]:
    """Per-subject reports plus field-wise means, aggregated in input order."""
    reports = [evaluate_pair(label, pred) for label, pred in pairs]
    agg: dict[str, float] = {}
    if reports:
        keys = reports[0].to_dict().keys()
        for k in keys:
            agg[k] = float(np.mean([r.to_dict()[k] for r in reports]))
    return reports, agg


# -- ranking ----------------------------------------------------------------


@dataclass
class RankTable:
    """Per-cell ranks over a value grid plus per-row mean ranks.

    Ranks are dense: ties share the lower (better) rank and the next
    distinct value takes the next integer, so e.g. values 1,1,2 rank 1,1,2.
    """

    rows: list[str]
    cols: list[str]
    directions: list[str]  # "up" (higher better) or "down"
    values: np.ndarray = field(repr=False)
    ranks: np.ndarray = field(repr=False)
    mean_ranks: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "directions": self.directions,
            "values": self.values.tolist(),
            "ranks": self.ranks.tolist(),
            "mean_ranks": self.mean_ranks,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["method"]
        for name in self.cols:
            header += [name, f"{name}_rank"]
        header.append("mean_rank")
        w.writerow(header)
        for i, row in enumerate(self.rows):
            cells = [row]
            for j in range(len(self.cols)):
                cells += [repr(float(self.values[i, j])), int(self.ranks[i, j])]
            cells.append(repr(float(self.mean_ranks[i])))
            w.writerow(cells)
        return buf.getvalue()


def _dense_ranks(col: np.ndarray, direction: str) -> np.ndarray:
    distinct = np.unique(col)  # ascending
    if direction == "up":
        distinct = distinct[::-1]
    pos = {v: r + 1 for r, v in enumerate(distinct)}
    return np.array([pos[v] for v in col], dtype=np.int64)


def rank_table(values, directions: Sequence[str],
               rows: Optional[Sequence[str]] = None,
               cols: Optional[Sequence[str]] = None) -> RankTable:
    """Rank a rectangular value grid column by column.

    direction "up" means higher is better. Any NaN cell is an error.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 2:
        raise ValueError("values must be a 2D grid")
    if vals.shape[1] != len(directions):
        raise ValueError("one direction per column required")
    for d in directions:
        if d not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {d!r}")
    if np.isnan(vals).any():
        raise ValueError("value grid contains NaN")
    nrows, ncols = vals.shape
    row_names = list(rows) if rows is not None else [f"row{i}" for i in range(nrows)]
    col_names = list(cols) if cols is not None else [f"col{j}" for j in range(ncols)]
    if len(row_names) != nrows or len(col_names) != ncols:
        raise ValueError("row/col name counts must match the grid")

    ranks = np.empty_like(vals, dtype=np.int64)
    for j in range(ncols):
        ranks[:, j] = _dense_ranks(vals[:, j], directions[j])
    mean_ranks = [float(np.mean(ranks[i, :])) for i in range(nrows)]
    return RankTable(row_names, col_names, list(directions), vals, ranks, mean_ranks)
