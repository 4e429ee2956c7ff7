"""Segmentation losses: pixel-wise bases, instance-wise terms, center-of-
instance terms, and their compounds.

Every loss returns a DiffScalar on a tape, differentiable w.r.t. the
prediction volume. Discrete structure (thresholding, component extraction,
which instances intersect, where cubes land) is resolved from current
prediction values and treated as fixed selectors; gradients flow only
through the soft probabilities inside the selected supports.

Per-instance terms are accumulated in ascending instance-id order with
sequential summation so results are bit-identical regardless of any outer
parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .diffgraph import DiffScalar, Tape, VolumeRef
from .errors import EvenCubeSize, ShapeMismatch
from .labeling import (CcaConfig, ComponentLabeling, intersecting_instances,
                       label_components_exact, label_components_maxpool)
from .volume import BinaryMask, Volume, threshold

BASE_LOSSES = ("dice", "bce", "focal")
INSTANCE_VARIANTS = ("standard", "no_tp")
CENTER_FILLS = ("instance_mean_prob", "constant_one")
CCA_BACKENDS = ("exact", "maxpool")


@dataclass(frozen=True)
class LossConfig:
    """All loss hyperparameters.

    a, b, c weight the global, instance-wise, and center terms of the
    three-part compound; d is the center weight in the dual compound,
    where c weights the predicted-side instance term instead. alpha/beta
    are the blob-loss baseline weights. delta is the cube edge length,
    tau the binarization threshold, sigma the Dice smoothing constant.
    """

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    d: float = 0.0
    alpha: float = 2.0
    beta: float = 1.0
    delta: int = 7
    tau: float = 0.5
    sigma: float = 1e-5
    base_loss: str = "dice"
    gamma: float = 2.0
    instance_variant: str = "standard"
    center_fill: str = "instance_mean_prob"
    cca_backend: str = "exact"
    maxpool_iterations: Optional[int] = None

    def __post_init__(self):
        for name in ("a", "b", "c", "d", "alpha", "beta", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.delta < 1 or self.delta % 2 == 0:
            raise EvenCubeSize(f"delta must be odd and positive, got {self.delta}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0,1), got {self.tau}")
        if self.base_loss not in BASE_LOSSES:
            raise ValueError(f"base_loss must be one of {BASE_LOSSES}")
        if self.instance_variant not in INSTANCE_VARIANTS:
            raise ValueError(f"instance_variant must be one of {INSTANCE_VARIANTS}")
        if self.center_fill not in CENTER_FILLS:
            raise ValueError(f"center_fill must be one of {CENTER_FILLS}")
        if self.cca_backend not in CCA_BACKENDS:
            raise ValueError(f"cca_backend must be one of {CCA_BACKENDS}")

    def cca_config(self) -> CcaConfig:
        return CcaConfig(maxpool_iterations=self.maxpool_iterations)


@dataclass
class CompoundLossResult:
    """Total plus the individual weighted-sum components, all on one tape."""

    total: DiffScalar
    components: dict[str, DiffScalar]
    cc_label: Optional[ComponentLabeling] = None
    cc_output: Optional[ComponentLabeling] = None

    @property
    def tape(self) -> Tape:
        return self.total.tape

    def component_values(self) -> dict[str, float]:
        return {k: v.value for k, v in self.components.items()}


def _as_ref(p: Union[Volume, VolumeRef], tape: Optional[Tape]) -> tuple[Tape, VolumeRef]:
    if isinstance(p, VolumeRef):
        return p.tape, p
    t = tape if tape is not None else Tape()
    return t, t.input(p)


def _target_array(y: Union[BinaryMask, Volume, np.ndarray]) -> np.ndarray:
    if isinstance(y, (BinaryMask, Volume)):
        return y.data.astype(np.float64)
    return np.asarray(y, np.float64).reshape(-1)


def _check_sizes(y: np.ndarray, p: VolumeRef):
    if y.size != p.values.size:
        raise ShapeMismatch(f"target has {y.size} voxels, prediction {p.values.size}")


def _base_loss_on(tape: Tape, y: np.ndarray, p: VolumeRef, cfg: LossConfig) -> DiffScalar:
    _check_sizes(y, p)
    if cfg.base_loss == "dice":
        return _dice_on(tape, y, p, cfg.sigma)
    if cfg.base_loss == "bce":
        return tape.pixel_nll_sum(p, y, gamma=0.0) * (1.0 / y.size)
    return tape.pixel_nll_sum(p, y, gamma=cfg.gamma) * (1.0 / y.size)


def _dice_on(tape: Tape, y: np.ndarray, p: VolumeRef, sigma: float) -> DiffScalar:
    sum_y = float(np.sum(y))
    inter = tape.weighted_sum(p, y)
    sum_p = tape.vsum(p)
    if sum_y + sum_p.value + sigma == 0.0:
        # both sides empty at sigma=0: perfect agreement
        return tape.const(0.0)
    num = 2.0 * inter + sigma
    den = sum_p + (sum_y + sigma)
    return 1.0 - num / den


def dice_loss(y, p, sigma: float = 1e-5, tape: Optional[Tape] = None) -> DiffScalar:
    """1 - (2*sum(y*p) + sigma) / (sum(y) + sum(p) + sigma)."""
    t, ref = _as_ref(p, tape)
    ya = _target_array(y)
    _check_sizes(ya, ref)
    return _dice_on(t, ya, ref, sigma)


def bce_loss(y, p, tape: Optional[Tape] = None) -> DiffScalar:
    """Voxel-mean binary cross-entropy, probabilities clamped at 1e-12."""
    t, ref = _as_ref(p, tape)
    ya = _target_array(y)
    _check_sizes(ya, ref)
    return t.pixel_nll_sum(ref, ya, gamma=0.0) * (1.0 / ya.size)


def focal_loss(y, p, gamma: float = 2.0, tape: Optional[Tape] = None) -> DiffScalar:
    """Voxel-mean of -(1-pt)^gamma * log(pt); gamma=0 reduces to BCE."""
    t, ref = _as_ref(p, tape)
    ya = _target_array(y)
    _check_sizes(ya, ref)
    return t.pixel_nll_sum(ref, ya, gamma=gamma) * (1.0 / ya.size)


# -- instance-wise terms --------------------------------------------------


def _instance_terms(tape: Tape, primary: ComponentLabeling,
                    secondary: ComponentLabeling, p: VolumeRef,
                    cfg: LossConfig, primary_is_label: bool) -> list[DiffScalar]:
    """One loss term per primary instance.

    Label-primary: target is the single label instance; the prediction is
    masked to the union of secondary (predicted) instances intersecting it,
    an empty union masking out everything (maximal miss penalty).
    Prediction-primary (dual compound): the prediction is masked to the
    single predicted instance; the binary target is the union of label
    instances intersecting it.
    The no-TP variant removes other *primary* instances' voxels from the
    opposite side, so overlaps that are true positives of sibling terms do
    not count as errors here.
    """
    n = primary.shape.num_voxels
    labels_primary = primary.labels
    terms = []
    for inst in primary.instances:
        ids = intersecting_instances(primary, secondary, inst.id)
        if len(ids) == 1:
            union = secondary.instances[ids[0] - 1].voxels
        elif ids:
            # secondary instances are disjoint, so order is irrelevant here
            union = np.concatenate([secondary.instances[j - 1].voxels for j in ids])
        else:
            union = np.empty(0, dtype=np.int64)
        if cfg.instance_variant == "no_tp" and union.size:
            others = (labels_primary != 0) & (labels_primary != inst.id)
            union = union[~others[union]]

        if primary_is_label:
            target = np.zeros(n)
            target[inst.voxels] = 1.0
            keep = np.zeros(n)
            keep[union] = 1.0
        else:
            target = np.zeros(n)
            target[union] = 1.0
            keep = np.zeros(n)
            keep[inst.voxels] = 1.0
        p_masked = tape.mask(p, keep)
        terms.append(_base_loss_on(tape, target, p_masked, cfg))
    return terms


def _mean(tape: Tape, terms: Sequence[DiffScalar]) -> DiffScalar:
    if not terms:
        return tape.const(0.0)
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))


def instance_loss(cc_label: ComponentLabeling, cc_output: ComponentLabeling,
                  p: Union[Volume, VolumeRef], cfg: LossConfig,
                  tape: Optional[Tape] = None) -> DiffScalar:
    """Per-ground-truth-instance base loss against intersecting predicted
    instances, averaged over ground-truth instances (0 when there are none)."""
    if cc_label.shape != cc_output.shape:
        raise ShapeMismatch(f"{cc_label.shape.dims} vs {cc_output.shape.dims}")
    t, ref = _as_ref(p, tape)
    terms = _instance_terms(t, cc_label, cc_output, ref, cfg, primary_is_label=True)
    return _mean(t, terms)


def predicted_instance_loss(cc_label: ComponentLabeling, cc_output: ComponentLabeling,
                            p: Union[Volume, VolumeRef], cfg: LossConfig,
                            tape: Optional[Tape] = None) -> DiffScalar:
    """Role-swapped instance loss: one term per predicted instance against
    the union of intersecting label instances, averaged over predictions."""
    if cc_label.shape != cc_output.shape:
        raise ShapeMismatch(f"{cc_label.shape.dims} vs {cc_output.shape.dims}")
    t, ref = _as_ref(p, tape)
    terms = _instance_terms(t, cc_output, cc_label, ref, cfg, primary_is_label=False)
    return _mean(t, terms)


@dataclass
class BatchLossAccumulator:
    """Instance-loss bookkeeping across a mini-batch of subjects."""

    subject_sums: list[float] = field(default_factory=list)
    subject_counts: list[int] = field(default_factory=list)

    @property
    def Z(self) -> int:
        return sum(self.subject_counts)

    @property
    def B(self) -> int:
        return len(self.subject_counts)


def instance_loss_batch(items: Sequence[tuple[ComponentLabeling, ComponentLabeling,
                                              Union[Volume, VolumeRef]]],
                        cfg: LossConfig,
                        tape: Optional[Tape] = None) -> tuple[DiffScalar, BatchLossAccumulator]:
    """Mini-batch instance loss: sum of per-instance terms over all subjects
    divided by the total ground-truth instance count Z (subjects with no
    instances contribute nothing to either side)."""
    t = tape if tape is not None else Tape()
    acc = BatchLossAccumulator()
    term_sum: Optional[DiffScalar] = None
    for cc_label, cc_output, p in items:
        if cc_label.shape != cc_output.shape:
            raise ShapeMismatch(f"{cc_label.shape.dims} vs {cc_output.shape.dims}")
        _, ref = _as_ref(p, t)
        terms = _instance_terms(t, cc_label, cc_output, ref, cfg, primary_is_label=True)
        subject_sum = 0.0
        for term in terms:
            term_sum = term if term_sum is None else term_sum + term
            subject_sum += term.value
        acc.subject_sums.append(subject_sum)
        acc.subject_counts.append(len(terms))
    if acc.Z == 0 or term_sum is None:
        return t.const(0.0), acc
    return term_sum * (1.0 / acc.Z), acc


# -- blob-loss baseline ----------------------------------------------------


def blob_loss_baseline(cc_label: ComponentLabeling, p: Union[Volume, VolumeRef],
                       cfg: LossConfig, tape: Optional[Tape] = None) -> CompoundLossResult:
    """Baseline instance-wise loss without output-side component analysis.

    Each term masks only the *other label* instances out of both sides, so
    false-positive prediction anywhere else leaks into every term. Compound
    is alpha * global + beta * mean-per-instance.
    """
    t, ref = _as_ref(p, tape)
    n = cc_label.shape.num_voxels
    if ref.values.size != n:
        raise ShapeMismatch(f"labeling has {n} voxels, prediction {ref.values.size}")
    labels = cc_label.labels
    label_full = (labels != 0).astype(np.float64)

    terms = []
    for inst in cc_label.instances:
        keep = np.ones(n)
        others = (labels != 0) & (labels != inst.id)
        keep[others] = 0.0
        target = np.zeros(n)
        target[inst.voxels] = 1.0
        p_masked = t.mask(ref, keep)
        terms.append(_base_loss_on(t, target, p_masked, cfg))
    inst_term = _mean(t, terms)
    global_term = _base_loss_on(t, label_full, ref, cfg)
    total = cfg.alpha * global_term + cfg.beta * inst_term
    return CompoundLossResult(
        total=total,
        components={"global": global_term, "instance": inst_term},
        cc_label=cc_label,
    )


# -- center-of-instance term ------------------------------------------------


def _cube_indices(flat_grid: np.ndarray, center: tuple[int, ...],
                  delta: int, dims: tuple[int, ...]) -> np.ndarray:
    half = delta // 2
    slices = tuple(slice(max(0, c - half), min(d, c + half + 1))
                   for c, d in zip(center, dims))
    return flat_grid[slices].reshape(-1)


def center_loss(cc_label: ComponentLabeling, cc_output: ComponentLabeling,
                p: Union[Volume, VolumeRef], cfg: LossConfig,
                tape: Optional[Tape] = None) -> DiffScalar:
    """Base loss between cube maps: every instance becomes an axis-aligned
    cube of edge delta at its center of mass, clipped at the bounds.

    Label cubes carry 1. Output cubes carry the instance's mean soft
    probability (differentiable) or a constant 1, with overlaps resolved to
    the maximum fill value (ties keep the lower instance id).
    """
    if cfg.delta % 2 == 0:
        raise EvenCubeSize(f"delta must be odd, got {cfg.delta}")
    if cc_label.shape != cc_output.shape:
        raise ShapeMismatch(f"{cc_label.shape.dims} vs {cc_output.shape.dims}")
    t, ref = _as_ref(p, tape)
    shape = cc_label.shape
    n = shape.num_voxels
    if ref.values.size != n:
        raise ShapeMismatch(f"labeling has {n} voxels, prediction {ref.values.size}")
    flat_grid = np.arange(n, dtype=np.int64).reshape(shape.dims)

    label_map = np.zeros(n)
    for inst in cc_label.instances:
        label_map[_cube_indices(flat_grid, inst.center_of_mass, cfg.delta, shape.dims)] = 1.0

    fills: list[DiffScalar] = []
    for inst in cc_output.instances:
        if cfg.center_fill == "constant_one":
            fills.append(t.const(1.0))
        else:
            fills.append(t.subset_sum(ref, inst.voxels) * (1.0 / inst.size))

    owners = np.full(n, -1, dtype=np.int64)
    best = np.zeros(n)
    for j, inst in enumerate(cc_output.instances):
        idx = _cube_indices(flat_grid, inst.center_of_mass, cfg.delta, shape.dims)
        v = fills[j].value
        take = idx[v > best[idx]]
        owners[take] = j
        best[take] = v
    out_map = t.scatter(fills, owners, n)
    return _base_loss_on(t, label_map, out_map, cfg)


# -- compounds ---------------------------------------------------------------


def _labeller(cfg: LossConfig):
    return (label_components_exact if cfg.cca_backend == "exact"
            else label_components_maxpool)


def _segment_both(label: BinaryMask, p_values: np.ndarray, cfg: LossConfig,
                  cc_label: Optional[ComponentLabeling] = None,
                  ) -> tuple[ComponentLabeling, ComponentLabeling]:
    """Component analysis of the label (reusable across calls on the same
    label) and of the thresholded prediction."""
    pred_mask = threshold(Volume(label.shape, p_values.copy()), cfg.tau)
    labeller = _labeller(cfg)
    cca = cfg.cca_config()
    if cc_label is None:
        cc_label = labeller(label, cca)
    return cc_label, labeller(pred_mask, cca)


def ici_loss(label: BinaryMask, p: Union[Volume, VolumeRef], cfg: LossConfig,
             tape: Optional[Tape] = None,
             cc_label: Optional[ComponentLabeling] = None) -> CompoundLossResult:
    """Three-part compound: a*global + b*instance + c*center, with all
    components reported. ``cc_label`` may carry a precomputed labeling of
    ``label`` (it never changes across prediction updates)."""
    if cfg.a + cfg.b + cfg.c <= 0:
        raise ValueError("compound loss needs a + b + c > 0")
    t, ref = _as_ref(p, tape)
    ya = label.data.astype(np.float64)
    _check_sizes(ya, ref)
    cc_label, cc_output = _segment_both(label, ref.values, cfg, cc_label)

    g = _base_loss_on(t, ya, ref, cfg)
    i = instance_loss(cc_label, cc_output, ref, cfg, t)
    e = center_loss(cc_label, cc_output, ref, cfg, t)
    total = cfg.a * g + cfg.b * i + cfg.c * e
    return CompoundLossResult(
        total=total,
        components={"global": g, "instance": i, "center": e},
        cc_label=cc_label,
        cc_output=cc_output,
    )


def dici_loss(label: BinaryMask, p: Union[Volume, VolumeRef], cfg: LossConfig,
              tape: Optional[Tape] = None,
              cc_label: Optional[ComponentLabeling] = None) -> CompoundLossResult:
    """Dual compound: a*global + b*groundtruth-side + c*predicted-side +
    d*center. The predicted-side term swaps the roles of label and output
    instance sets."""
    if cfg.a + cfg.b + cfg.c + cfg.d <= 0:
        raise ValueError("compound loss needs a + b + c + d > 0")
    t, ref = _as_ref(p, tape)
    ya = label.data.astype(np.float64)
    _check_sizes(ya, ref)
    cc_label, cc_output = _segment_both(label, ref.values, cfg, cc_label)

    g = _base_loss_on(t, ya, ref, cfg)
    gt = instance_loss(cc_label, cc_output, ref, cfg, t)
    pr = predicted_instance_loss(cc_label, cc_output, ref, cfg, t)
    e = center_loss(cc_label, cc_output, ref, cfg, t)
    total = cfg.a * g + cfg.b * gt + cfg.c * pr + cfg.d * e
    return CompoundLossResult(
        total=total,
        components={"global": g, "groundtruth": gt, "predicted": pr, "center": e},
        cc_label=cc_label,
        cc_output=cc_output,
    )


def blob_compound_loss(label: BinaryMask, p: Union[Volume, VolumeRef],
                       cfg: LossConfig, tape: Optional[Tape] = None,
                       cc_label: Optional[ComponentLabeling] = None,
                       ) -> CompoundLossResult:
    """Blob-loss baseline driven from a raw mask (labels the mask, then
    delegates); alpha/beta weights apply."""
    t, ref = _as_ref(p, tape)
    ya = label.data.astype(np.float64)
    _check_sizes(ya, ref)
    if cc_label is None:
        cc_label = _labeller(cfg)(label, cfg.cca_config())
    return blob_loss_baseline(cc_label, ref, cfg, t)
