"""Deterministic synthetic multi-blob masks for tests and the demo.

The generator is a pure function of its seed so fixtures reproduce
byte-for-byte, including across language ports. The PRNG is pinned:

* state setup: splitmix64 applied four times to the seed gives the four
  64-bit words of a xoshiro256** state (an all-zero expansion is avoided
  by splitmix64's constants);
* ``next_u64``: standard xoshiro256** output and state transition;
* ``uniform()``: top 53 bits of next_u64, scaled by 2**-53, in [0, 1);
* ``randint(n)``: (next_u64 * n) >> 64 (multiply-shift reduction);
* ``normal()``: Box-Muller on two uniforms, cached in pairs, with
  u1 drawn as 1 - uniform() so log(u1) is finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import math

import numpy as np
from scipy import ndimage

from .errors import PlacementFailed
from .labeling import ComponentLabeling, label_components_exact
from .volume import BinaryMask, Shape

_MASK64 = (1 << 64) - 1

# Chebyshev-adjacent voxels are at Euclidean distance <= sqrt(3); keeping
# blobs strictly farther apart than this guarantees they stay separate
# components under full connectivity.
_MIN_COMPONENT_GAP = 1.8


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return x, z


class Xoshiro256StarStar:
    """xoshiro256** seeded through splitmix64; see module docstring."""

    def __init__(self, seed: int):
        s = seed & _MASK64
        self._s = []
        for _ in range(4):
            s, word = _splitmix64(s)
            self._s.append(word)
        self._gauss_cache: Optional[float] = None

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _MASK64

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (self._rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def randint(self, n: int) -> int:
        """Uniform-ish integer in [0, n) via multiply-shift."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def randrange(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError("empty range")
        return lo + self.randint(hi - lo + 1)

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
        else:
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._gauss_cache = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * z

    def normal_array(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return np.array([self.normal(mu, sigma) for _ in range(n)])

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct values from range(n), partial Fisher-Yates order."""
        if k > n:
            raise ValueError("k must be <= n")
        pool = list(range(n))
        out = []
        for i in range(k):
            j = i + self.randint(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out


@dataclass(frozen=True)
class BlobSpec:
    """Blob population: count/radius ranges (inclusive), blob shape, the
    minimum pairwise voxel distance between instances, and the seed."""

    count: tuple[int, int] = (5, 5)
    radius: tuple[int, int] = (2, 6)
    shape: str = "sphere"
    min_separation: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.count[0] < 0 or self.count[1] < self.count[0]:
            raise ValueError(f"bad count range {self.count}")
        if self.radius[0] < 1 or self.radius[1] < self.radius[0]:
            raise ValueError(f"bad radius range {self.radius}")
        if self.shape not in ("sphere", "cube"):
            raise ValueError("shape must be 'sphere' or 'cube'")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")


def _blob_offsets(radius: int, kind: str, ndim: int) -> np.ndarray:
    """Integer offsets of the blob's voxels around its center."""
    rng = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([rng] * ndim), indexing="ij")
    offs = np.stack([g.reshape(-1) for g in grids], axis=1)
    if kind == "sphere":
        keep = np.sum(offs.astype(np.float64) ** 2, axis=1) <= radius * radius
        offs = offs[keep]
    return offs


_PLACEMENT_TRIES = 200


def _place_blobs(grid: np.ndarray, blocked: np.ndarray, rng: Xoshiro256StarStar,
                 count: int, radius_range: tuple[int, int], kind: str,
                 separation: float) -> None:
    """Rasterize ``count`` blobs into ``grid``, each strictly farther than
    max(separation, component gap) from everything already in ``blocked``.
    Mutates grid and blocked in place; raises PlacementFailed on exhaustion."""
    dims = grid.shape
    ndim = len(dims)
    gap = max(separation, _MIN_COMPONENT_GAP)
    dist = ndimage.distance_transform_edt(~blocked) if blocked.any() else None
    for _ in range(count):
        placed = False
        for _try in range(_PLACEMENT_TRIES):
            radius = rng.randrange(radius_range[0], radius_range[1])
            if any(d < 2 * radius + 1 for d in dims):
                continue
            center = tuple(rng.randrange(radius, d - 1 - radius) for d in dims)
            offs = _blob_offsets(radius, kind, ndim)
            coords = tuple(offs[:, ax] + center[ax] for ax in range(ndim))
            if dist is not None and float(dist[coords].min()) <= gap:
                continue
            grid[coords] = 1
            blocked[coords] = True
            dist = ndimage.distance_transform_edt(~blocked)
            placed = True
            break
        if not placed:
            raise PlacementFailed(
                f"could not place blob after {_PLACEMENT_TRIES} tries "
                f"(dims={dims}, radius range={radius_range}, gap={gap})"
            )


def generate(shape: Shape, spec: BlobSpec) -> tuple[BinaryMask, ComponentLabeling]:
    """Deterministic multi-blob mask plus its (exact) component labeling."""
    rng = Xoshiro256StarStar(spec.seed)
    count = rng.randrange(spec.count[0], spec.count[1])
    grid = np.zeros(shape.dims, dtype=np.uint8)
    blocked = np.zeros(shape.dims, dtype=bool)
    _place_blobs(grid, blocked, rng, count, spec.radius, spec.shape,
                 spec.min_separation)
    mask = BinaryMask(shape, grid)
    return mask, label_components_exact(mask)


def corrupt(mask: BinaryMask, drop_instances: int, add_false: int, seed: int,
            radius: tuple[int, int] = (1, 3), kind: str = "sphere",
            separation: float = 2.0) -> BinaryMask:
    """Remove ``drop_instances`` instances uniformly at random and add
    ``add_false`` blobs that neither overlap nor touch the original
    foreground (so each adds exactly one false instance against the
    original mask)."""
    cc = label_components_exact(mask)
    if drop_instances > cc.num_instances:
        raise ValueError(
            f"cannot drop {drop_instances} of {cc.num_instances} instances")
    rng = Xoshiro256StarStar(seed)
    data = mask.data.copy()
    if drop_instances:
        drop = rng.sample_without_replacement(cc.num_instances, drop_instances)
        for i in drop:
            data[cc.instances[i].voxels] = 0
    grid = data.reshape(mask.shape.dims)
    # block against the original foreground too: added blobs must stay clear
    # of dropped regions or they would overlap label instances
    blocked = (mask.grid > 0) | (grid > 0)
    _place_blobs(grid, blocked, rng, add_false, radius, kind, separation)
    return BinaryMask(mask.shape, grid)
