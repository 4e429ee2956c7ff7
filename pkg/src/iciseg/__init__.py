"""Instance-aware segmentation losses over dense volumes.

The package couples a small reverse-mode autodiff tape with connected-
component analysis so that instance-wise and center-of-instance loss terms
stay differentiable w.r.t. soft predictions, and ships the matching
instance-level evaluation metrics, a synthetic blob generator, and a
desk-scale gradient-descent demo.
"""

from .diffgraph import DiffScalar, Tape, VolumeRef, finite_diff_check
from .errors import (BadMagic, EvenCubeSize, IcisegError, IndexOutOfRange,
                     NonFiniteLoss, NonFiniteValue, PlacementFailed,
                     ShapeMismatch, TruncatedPayload, UnknownDtype)
from .labeling import (CcaConfig, ComponentLabeling, InstanceRecord,
                       center_of_mass, intersecting_instances,
                       label_components_exact, label_components_maxpool)
from .losses import (BatchLossAccumulator, CompoundLossResult, LossConfig,
                     bce_loss, blob_compound_loss, blob_loss_baseline,
                     center_loss, dice_loss, dici_loss, focal_loss, ici_loss,
                     instance_loss, instance_loss_batch,
                     predicted_instance_loss)
from .metrics import (MetricReport, RankTable, evaluate_batch, evaluate_pair,
                      rank_table)
from .optim import ComparisonReport, RunSpec, TrainRun, compare, run, trace_to_csv
from .synth import BlobSpec, Xoshiro256StarStar, corrupt, generate
from .volume import (BinaryMask, Shape, Volume, mask_to_volume, read_volume,
                     read_volume_file, threshold, write_volume,
                     write_volume_file)

__version__ = "0.1.0"
