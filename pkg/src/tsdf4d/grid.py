"""Multi-resolution sparse voxel grid with per-vertex feature vectors.

Each level is an exact keyed table: vertex lattice coordinates are packed
into one int64 and kept sorted, so lookups are a ``searchsorted`` away and
there is no hash aliasing.  Interpolated features are summed over levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BITS = 21
_OFFSET = 1 << (_BITS - 1)
_MASK = (1 << _BITS) - 1

# corner c of a voxel sits at (c & 1, c >> 1 & 1, c >> 2 & 1)
CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)


def pack_keys(ijk: np.ndarray) -> np.ndarray:
    ijk = np.asarray(ijk, dtype=np.int64)
    if ijk.size and (ijk.min() < -_OFFSET or ijk.max() >= _OFFSET):
        raise ValueError("lattice coordinate outside the packable range")
    u = ijk + _OFFSET
    return (u[..., 0] << (2 * _BITS)) | (u[..., 1] << _BITS) | u[..., 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.stack([(keys >> (2 * _BITS)) & _MASK, (keys >> _BITS) & _MASK, keys & _MASK], axis=-1)
    return out - _OFFSET


def voxel_coords(points: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)


@dataclass
class GridLevel:
    voxel_size: float
    keys: np.ndarray        # sorted packed vertex keys
    features: np.ndarray    # (n, D)

    def __post_init__(self):
        self.grad = np.zeros_like(self.features)
        self.adam_m = np.zeros_like(self.features)
        self.adam_v = np.zeros_like(self.features)
        self._voxel_keys = None
        self._voxel_rows = None

    def __len__(self) -> int:
        return len(self.keys)

    def find(self, keys: np.ndarray) -> np.ndarray:
        """Row index of each key, or -1 where the vertex was never allocated."""
        keys = np.asarray(keys, dtype=np.int64)
        if len(self.keys) == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, len(self.keys) - 1)
        return np.where(self.keys[pos_c] == keys, pos_c, -1)

    def _voxel_table(self):
        """Voxels whose 8 corners are all allocated, with their corner rows."""
        if self._voxel_keys is None:
            base = unpack_keys(self.keys)
            rows = self.find(pack_keys(base[:, None, :] + CORNER_OFFSETS[None]))
            full = (rows >= 0).all(axis=1)
            self._voxel_keys = self.keys[full]
            self._voxel_rows = rows[full]
        return self._voxel_keys, self._voxel_rows

    def corner_rows(self, base: np.ndarray) -> np.ndarray:
        """(n, 8) rows of the corners of voxels with lower corner ``base``; -1 if absent."""
        vkeys, vrows = self._voxel_table()
        keys = pack_keys(base)
        out = np.empty((len(keys), 8), dtype=np.int64)
        if len(vkeys):
            pos = np.minimum(np.searchsorted(vkeys, keys), len(vkeys) - 1)
            hit = vkeys[pos] == keys
        else:
            pos, hit = np.zeros(len(keys), dtype=np.int64), np.zeros(len(keys), dtype=bool)
        out[hit] = vrows[pos[hit]]
        miss = ~hit
        if miss.any():
            out[miss] = self.find(pack_keys(base[miss][:, None, :] + CORNER_OFFSETS[None]))
        return out


@dataclass
class LevelStencil:
    index: np.ndarray    # (n, 8) row indices, -1 for absent vertices
    weight: np.ndarray   # (n, 8) trilinear weights (recorded even when absent)

    @property
    def present(self) -> np.ndarray:
        return self.index >= 0


class FeatureGrid:
    def __init__(self, levels: list[GridLevel], occupancy: np.ndarray):
        self.levels = levels
        self.occupancy = np.asarray(occupancy, dtype=np.int64)

    @property
    def feature_dim(self) -> int:
        return self.levels[0].features.shape[1]

    @property
    def finest_voxel_size(self) -> float:
        return self.levels[0].voxel_size

    def vertex_count(self) -> int:
        return sum(len(lv) for lv in self.levels)

    def lookup(self, level: int, ijk) -> np.ndarray | None:
        """Feature of one vertex, or None when it is not allocated."""
        lv = self.levels[level]
        row = int(lv.find(pack_keys(np.asarray(ijk))[None])[0])
        return None if row < 0 else lv.features[row]

    def occupied_voxels(self) -> np.ndarray:
        """Lattice coordinates of finest voxels that hold a scan endpoint."""
        return unpack_keys(self.occupancy)

    def interpolate(self, points: np.ndarray) -> tuple[np.ndarray, list[LevelStencil]]:
        """Trilinear interpolation per level, summed over levels.

        Absent corners contribute nothing but keep their weight in the stencil.
        """
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), self.feature_dim))
        stencils = []
        for lv in self.levels:
            scaled = pts / lv.voxel_size
            base = np.floor(scaled)
            frac = scaled - base
            index = lv.corner_rows(base.astype(np.int64))
            w = np.where(CORNER_OFFSETS[None], frac[:, None, :], 1.0 - frac[:, None, :]).prod(axis=2)
            if len(lv):
                feats = lv.features[np.maximum(index, 0)]
                out += np.einsum("nc,ncd->nd", np.where(index >= 0, w, 0.0), feats)
            stencils.append(LevelStencil(index, w))
        if single:
            return out[0], stencils
        return out, stencils

    def scatter_grad(self, stencils: list[LevelStencil], upstream: np.ndarray) -> None:
        """grad[v] += weight * upstream for every present vertex in the stencil."""
        up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        d = up.shape[1]
        for lv, st in zip(self.levels, stencils):
            if not len(lv):
                continue
            ok = st.index >= 0
            contrib = (np.where(ok, st.weight, 0.0)[:, :, None] * up[:, None, :]).reshape(-1)
            flat = (np.maximum(st.index, 0)[:, :, None] * d + np.arange(d)).reshape(-1)
            # bincount sums sequentially: reproducible regardless of threading
            lv.grad += np.bincount(flat, weights=contrib, minlength=len(lv) * d).reshape(len(lv), d)

    def zero_grad(self) -> None:
        for lv in self.levels:
            lv.grad[:] = 0.0


def allocate(endpoints: np.ndarray, sample_positions: np.ndarray, voxel_sizes, feature_dim: int,
             seed: int) -> FeatureGrid:
    """Allocate the 8 corners of every voxel touched by an endpoint or sample.

    ``voxel_sizes`` runs finest first.  Features start uniform in +-1e-4.
    """
    endpoints = np.asarray(endpoints, dtype=np.float64).reshape(-1, 3)
    samples = np.asarray(sample_positions, dtype=np.float64).reshape(-1, 3)
    if len(endpoints) == 0:
        raise ValueError("cannot allocate a grid without scan endpoints")
    levels = []
    for level, vs in enumerate(voxel_sizes):
        vox = np.unique(np.concatenate([pack_keys(voxel_coords(endpoints, vs)),
                                        pack_keys(voxel_coords(samples, vs))]))
        corners = unpack_keys(vox)[:, None, :] + CORNER_OFFSETS[None]
        keys = np.unique(pack_keys(corners))
        rng = np.random.default_rng([seed, 101, level])
        feats = rng.uniform(-1e-4, 1e-4, size=(len(keys), feature_dim))
        levels.append(GridLevel(float(vs), keys, feats))
    occupancy = np.unique(pack_keys(voxel_coords(endpoints, voxel_sizes[0])))
    return FeatureGrid(levels, occupancy)
