"""Independent reference implementations used only to check the package.

These deliberately avoid the code paths under test: component labelling is
a breadth-first flood fill over an explicit neighbor list, metrics are
recomputed from raw voxel sets, and sums are plain Python loops.
"""

from collections import deque
from itertools import product

import numpy as np

from iciseg import Shape


def neighbor_offsets(ndim: int) -> list[tuple[int, ...]]:
    return [off for off in product((-1, 0, 1), repeat=ndim)
            if any(o != 0 for o in off)]


def bfs_components(mask_grid: np.ndarray) -> list[list[int]]:
    """Flood-fill components under full connectivity; each component is a
    sorted list of flat indices, components ordered by minimum flat index."""
    dims = mask_grid.shape
    offsets = neighbor_offsets(len(dims))
    visited = np.zeros(dims, dtype=bool)
    components = []
    for start in zip(*np.nonzero(mask_grid)):
        if visited[start]:
            continue
        comp = []
        visited[start] = True
        q = deque([start])
        while q:
            cur = q.popleft()
            comp.append(int(np.ravel_multi_index(cur, dims)))
            for off in offsets:
                nxt = tuple(c + o for c, o in zip(cur, off))
                if any(x < 0 or x >= d for x, d in zip(nxt, dims)):
                    continue
                if mask_grid[nxt] and not visited[nxt]:
                    visited[nxt] = True
                    q.append(nxt)
        components.append(sorted(comp))
    components.sort(key=lambda c: c[0])
    return components


def brute_center(voxels, shape: Shape) -> tuple[int, ...]:
    coords = [shape.unravel(v) for v in voxels]
    out = []
    for axis in range(shape.ndim):
        mean = sum(c[axis] for c in coords) / len(coords)
        r = int(np.floor(mean + 0.5))
        out.append(min(max(r, 0), shape.dims[axis] - 1))
    return tuple(out)


def brute_metrics(label_grid: np.ndarray, pred_grid: np.ndarray) -> dict:
    """Metric battery recomputed from BFS components and raw voxel sets."""
    label_comps = [set(c) for c in bfs_components(label_grid)]
    pred_comps = [set(c) for c in bfs_components(pred_grid)]
    label_fg = set(np.flatnonzero(label_grid.reshape(-1)).tolist())
    pred_fg = set(np.flatnonzero(pred_grid.reshape(-1)).tolist())

    inter = len(label_fg & pred_fg)
    total = len(label_fg) + len(pred_fg)
    dsc = 1.0 if total == 0 else 2.0 * inter / total
    missed = sum(1 for c in label_comps if not (c & pred_fg))
    false = sum(1 for c in pred_comps if not (c & label_fg))
    tp = len(label_comps) - missed
    denom = 2 * tp + false + missed
    f1 = 1.0 if denom == 0 else 2.0 * tp / denom
    return {
        "dsc": dsc,
        "missed_instances": missed,
        "false_instances": false,
        "lesionwise_f1": f1,
        "simple_lesion_count": float(abs(len(pred_comps) - len(label_comps))),
        "volume_difference": float(abs(len(pred_fg) - len(label_fg))),
        "n_label_instances": len(label_comps),
        "n_pred_instances": len(pred_comps),
    }
