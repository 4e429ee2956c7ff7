"""Minimal reverse-mode autodiff over scalar reductions of volumes.

A Tape records an append-only DAG of primitive nodes. Volume-valued nodes
(input, sigmoid, mask, scatter) feed scalar reductions (sums, weighted
sums, pixel-wise NLL sums), which combine through scalar arithmetic.
``backward`` walks the node list once in reverse with sequential per-node
accumulation, so gradients are bit-identical across runs and independent
of any parallelism elsewhere.

Discrete selectors (thresholding, component extraction, cube placement)
live outside the tape: gradients flow only through the soft prediction
values inside whatever supports the selectors picked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import IndexOutOfRange, NonFiniteValue
from .volume import Volume

_NLL_EPS = 1e-12  # probability clamp for log terms


class _Node:
    __slots__ = ("op", "parents", "value", "aux")

    def __init__(self, op, parents, value, aux=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.aux = aux


@dataclass(frozen=True)
class VolumeRef:
    """Handle to a volume-valued node on a tape."""

    tape: "Tape"
    node_id: int

    @property
    def values(self) -> np.ndarray:
        return self.tape._nodes[self.node_id].value


@dataclass(frozen=True)
class DiffScalar:
    """Handle to a scalar-valued node on a tape; supports arithmetic."""

    tape: "Tape"
    node_id: int

    @property
    def value(self) -> float:
        return self.tape._nodes[self.node_id].value

    def _coerce(self, other) -> "DiffScalar":
        if isinstance(other, DiffScalar):
            if other.tape is not self.tape:
                raise ValueError("cannot mix scalars from different tapes")
            return other
        return self.tape.const(float(other))

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.affine(self, 1.0, float(other))
        return self.tape.add(self, self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.affine(self, 1.0, -float(other))
        return self.tape.add(self, self.tape.affine(self._coerce(other), -1.0, 0.0))

    def __rsub__(self, other):
        return self.tape.affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.affine(self, float(other), 0.0)
        return self.tape.mul(self, self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.affine(self, 1.0 / float(other), 0.0)
        return self.tape.div(self, self._coerce(other))

    def __rtruediv__(self, other):
        return self.tape.div(self._coerce(other), self)

    def __neg__(self):
        return self.tape.affine(self, -1.0, 0.0)


class Tape:
    """Append-only record of primitive operations.

    Single-owner while being built; immutable and reusable once finished.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._inputs: list[int] = []

    # -- construction ----------------------------------------------------

    def _push(self, node: _Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def _scalar(self, op, parents, value, aux=None) -> DiffScalar:
        if not math.isfinite(value):
            raise NonFiniteValue(f"{op} produced {value!r}")
        return DiffScalar(self, self._push(_Node(op, parents, float(value), aux)))

    def input(self, v: Union[Volume, np.ndarray]) -> VolumeRef:
        """Register a prediction volume as a differentiable input."""
        data = v.data if isinstance(v, Volume) else np.asarray(v, np.float64).reshape(-1)
        if not np.isfinite(data).all():
            raise NonFiniteValue("input volume contains NaN/Inf")
        return VolumeRef(self, self._push(_Node("input", (), data)))

    def const(self, value: float) -> DiffScalar:
        return self._scalar("const", (), value)

    def sigmoid(self, x: VolumeRef) -> VolumeRef:
        s = expit(x.values)
        return VolumeRef(self, self._push(_Node("sigmoid", (x.node_id,), s)))

    def mask(self, x: VolumeRef, weights: np.ndarray) -> VolumeRef:
        """Elementwise multiply by a constant weight array (masking)."""
        w = np.asarray(weights, np.float64).reshape(-1)
        return VolumeRef(self, self._push(_Node("mask", (x.node_id,), x.values * w, w)))

    def scatter(self, scalars: Sequence[DiffScalar], owners: np.ndarray,
                n_voxels: int) -> VolumeRef:
        """Build a volume whose voxel i holds scalars[owners[i]] (owners[i] = -1
        leaves the voxel at 0). Adjoints accumulate back into each scalar."""
        owners = np.asarray(owners, np.int64).reshape(-1)
        if owners.size != n_voxels:
            raise ValueError("owners length must match voxel count")
        vals = np.array([s.value for s in scalars], dtype=np.float64)
        out = np.zeros(n_voxels, dtype=np.float64)
        sel = owners >= 0
        if vals.size:
            out[sel] = vals[owners[sel]]
        parents = tuple(s.node_id for s in scalars)
        nid = self._push(_Node("scatter", parents, out, owners))
        return VolumeRef(self, nid)

    def vsum(self, x: VolumeRef) -> DiffScalar:
        return self._scalar("vsum", (x.node_id,), float(np.sum(x.values)))

    def subset_sum(self, x: VolumeRef, idx: np.ndarray) -> DiffScalar:
        """Sum of x over a sorted, duplicate-free flat index list."""
        idx = np.asarray(idx, np.int64)
        vals = x.values
        if idx.size and (idx[0] < 0 or idx[-1] >= vals.size):
            raise IndexOutOfRange(f"indices outside [0, {vals.size})")
        return self._scalar("subset_sum", (x.node_id,), float(np.sum(vals[idx])), idx)

    def weighted_sum(self, x: VolumeRef, weights: np.ndarray) -> DiffScalar:
        w = np.asarray(weights, np.float64).reshape(-1)
        return self._scalar("weighted_sum", (x.node_id,),
                            float(np.sum(x.values * w)), w)

    def pixel_nll_sum(self, x: VolumeRef, target: np.ndarray,
                      gamma: float = 0.0) -> DiffScalar:
        """Sum over voxels of -(1-pt)^gamma * log(pt), pt the true-class
        probability; gamma=0 is plain binary cross-entropy. Probabilities are
        clamped to [eps, 1-eps] with eps=1e-12 and the clamp is flat for
        gradients."""
        y = np.asarray(target, np.float64).reshape(-1)
        p = x.values
        pt = y * p + (1.0 - y) * (1.0 - p)
        ptc = np.clip(pt, _NLL_EPS, 1.0 - _NLL_EPS)
        if gamma == 0.0:
            total = float(np.sum(-np.log(ptc)))
        else:
            total = float(np.sum(-((1.0 - ptc) ** gamma) * np.log(ptc)))
        return self._scalar("pixel_nll_sum", (x.node_id,), total, (y, pt, ptc, gamma))

    def add(self, u: DiffScalar, v: DiffScalar) -> DiffScalar:
        return self._scalar("add", (u.node_id, v.node_id), u.value + v.value)

    def mul(self, u: DiffScalar, v: DiffScalar) -> DiffScalar:
        return self._scalar("mul", (u.node_id, v.node_id), u.value * v.value)

    def div(self, u: DiffScalar, v: DiffScalar) -> DiffScalar:
        if v.value == 0.0:
            raise NonFiniteValue("division by zero on tape")
        return self._scalar("div", (u.node_id, v.node_id), u.value / v.value)

    def affine(self, u: DiffScalar, k: float, b: float) -> DiffScalar:
        return self._scalar("affine", (u.node_id,), k * u.value + b, (k, b))

    # -- reverse sweep ---------------------------------------------------

    def backward(self, root: DiffScalar,
                 wrt: Optional[Sequence[VolumeRef]] = None) -> list[np.ndarray]:
        """Gradient of root w.r.t. each requested input volume (default: all
        inputs, in registration order). Deterministic: fixed reverse node
        order with sequential accumulation."""
        if root.tape is not self:
            raise ValueError("root is not on this tape")
        nodes = self._nodes
        adj: list = [None] * len(nodes)
        adj[root.node_id] = 1.0

        def vol_adj(nid):
            if adj[nid] is None:
                adj[nid] = np.zeros_like(nodes[nid].value)
            return adj[nid]

        def sacc(nid, delta):
            adj[nid] = delta if adj[nid] is None else adj[nid] + delta

        for nid in range(root.node_id, -1, -1):
            a = adj[nid]
            if a is None:
                continue
            node = nodes[nid]
            op = node.op
            if op in ("input", "const"):
                continue
            if op == "sigmoid":
                s = node.value
                buf = vol_adj(node.parents[0])
                buf += a * s * (1.0 - s)
            elif op == "mask":
                buf = vol_adj(node.parents[0])
                buf += a * node.aux
            elif op == "scatter":
                owners = node.aux
                sel = owners >= 0
                if node.parents:
                    contrib = np.bincount(owners[sel], weights=a[sel],
                                          minlength=len(node.parents))
                    for j, pid in enumerate(node.parents):
                        sacc(pid, float(contrib[j]))
            elif op == "vsum":
                buf = vol_adj(node.parents[0])
                buf += a
            elif op == "subset_sum":
                buf = vol_adj(node.parents[0])
                buf[node.aux] += a
            elif op == "weighted_sum":
                buf = vol_adj(node.parents[0])
                buf += a * node.aux
            elif op == "pixel_nll_sum":
                y, pt, ptc, gamma = node.aux
                live = (pt > _NLL_EPS) & (pt < 1.0 - _NLL_EPS)
                if gamma == 0.0:
                    dpt = -1.0 / ptc
                else:
                    one_m = 1.0 - ptc
                    dpt = gamma * one_m ** (gamma - 1.0) * np.log(ptc) \
                        - one_m ** gamma / ptc
                dpt = np.where(live, dpt, 0.0)
                buf = vol_adj(node.parents[0])
                buf += a * dpt * (2.0 * y - 1.0)
            elif op == "add":
                u, v = node.parents
                sacc(u, a)
                sacc(v, a)
            elif op == "mul":
                u, v = node.parents
                sacc(u, a * nodes[v].value)
                sacc(v, a * nodes[u].value)
            elif op == "div":
                u, v = node.parents
                uval, vval = nodes[u].value, nodes[v].value
                sacc(u, a / vval)
                sacc(v, -a * uval / (vval * vval))
            elif op == "affine":
                k, _ = node.aux
                sacc(node.parents[0], a * k)
            else:  # pragma: no cover
                raise AssertionError(f"unknown op {op}")

        if wrt is None:
            targets = [VolumeRef(self, nid) for nid, n in enumerate(nodes)
                       if n.op == "input"]
        else:
            targets = list(wrt)
        out = []
        for ref in targets:
            g = adj[ref.node_id]
            if g is None:
                g = np.zeros_like(nodes[ref.node_id].value)
            out.append(g)
        return out


def finite_diff_check(f: Callable[[Volume], DiffScalar], v: Volume,
                      h: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` and central
    finite differences perturbing each voxel by +-h.

    ``f`` must build a fresh single-input tape per call when handed a plain
    Volume. Relative error uses a max(1, |analytic|, |numeric|) denominator.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = f(v)
    analytic = out.tape.backward(out)[0]

    data = v.data
    worst = 0.0
    work = data.copy()
    for i in range(data.size):
        orig = work[i]
        work[i] = orig + h
        fp = f(Volume(v.shape, work.copy())).value
        work[i] = orig - h
        fm = f(Volume(v.shape, work.copy())).value
        work[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        denom = max(1.0, abs(analytic[i]), abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return float(worst)
