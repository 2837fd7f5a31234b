"""Training samples drawn along scan rays.

Each ray from the scan origin ``o`` to endpoint ``s`` (length R) yields
``M_s`` samples with lambda in (1 - tau/R, 1 + tau/R) around the endpoint and
``M_f`` samples with lambda in (0, 1 - tau/R) in free space.  The projective
signed distance of a sample is (1 - lambda) * R.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core_io import MapConfig, Scan, ScanSequence

SURFACE, FREE, CERTAIN = 0, 1, 2
REGION_NAMES = {SURFACE: "surface", FREE: "free", CERTAIN: "certain_free"}


@dataclass
class SampleSet:
    q: np.ndarray        # (n, 3) world positions
    t: np.ndarray        # (n,) frame index
    d_surf: np.ndarray   # (n,) projective signed distance
    region: np.ndarray   # (n,) SURFACE / FREE / CERTAIN

    def __len__(self) -> int:
        return len(self.t)

    def select(self, mask) -> "SampleSet":
        return SampleSet(self.q[mask], self.t[mask], self.d_surf[mask], self.region[mask])

    @staticmethod
    def concat(parts) -> "SampleSet":
        parts = list(parts)
        if not parts:
            return SampleSet.empty()
        return SampleSet(np.concatenate([p.q for p in parts]), np.concatenate([p.t for p in parts]),
                         np.concatenate([p.d_surf for p in parts]), np.concatenate([p.region for p in parts]))

    @staticmethod
    def empty() -> "SampleSet":
        return SampleSet(np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int8))


@dataclass
class SamplePool:
    surface: SampleSet
    free: SampleSet
    certain: SampleSet
    skipped_rays: int = 0

    def counts(self) -> dict[str, int]:
        return {"surface": len(self.surface), "free": len(self.free), "certain_free": len(self.certain)}

    def all(self) -> SampleSet:
        return SampleSet.concat([self.surface, self.free, self.certain])


def _open_unit(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform on the open interval (0, 1)."""
    return rng.integers(1, 1 << 53, size=shape) / float(1 << 53)


def sample_rays(origin, endpoints, t: int, tau: float, m_s: int, m_f: int,
                rng: np.random.Generator) -> tuple[SampleSet, SampleSet, int]:
    """Surface and free samples for every ray of one scan; rays with R <= tau are skipped."""
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    endpoints = np.asarray(endpoints, dtype=np.float64).reshape(-1, 3)
    ray = endpoints - origin
    r = np.linalg.norm(ray, axis=1)
    keep = r > tau
    ray, r = ray[keep], r[keep]
    tau_bar = tau / r

    def draw(lo, hi, m, region):
        lam = lo[:, None] + (hi - lo)[:, None] * _open_unit(rng, (len(r), m))
        q = origin + lam[..., None] * ray[:, None, :]
        d = (1.0 - lam) * r[:, None]
        n = q.shape[0] * m
        return SampleSet(q.reshape(-1, 3), np.full(n, t, dtype=np.int64), d.reshape(-1),
                         np.full(n, region, dtype=np.int8))

    surf = draw(1.0 - tau_bar, 1.0 + tau_bar, m_s, SURFACE)
    free = draw(np.zeros_like(r), 1.0 - tau_bar, m_f, FREE)
    return surf, free, int((~keep).sum())


def sample_ray(o, s, t: int, tau: float, m_s: int, m_f: int, rng: np.random.Generator) -> SampleSet | None:
    """Samples for a single ray, or None when the ray is not longer than ``tau``."""
    surf, free, skipped = sample_rays(o, s, t, tau, m_s, m_f, rng)
    if skipped:
        return None
    return SampleSet.concat([surf, free])


def nearest_in_scan(scan: Scan, p) -> np.ndarray | float:
    """Exact Euclidean distance from each query to its nearest endpoint in ``scan``."""
    single = np.ndim(p) == 1
    dist, _ = cKDTree(scan.points_world).query(np.atleast_2d(p), k=1)
    return float(dist[0]) if single else dist


def split_certain(free: SampleSet, scan: Scan, tau: float, r_dense: float,
                  tree: cKDTree | None = None) -> tuple[SampleSet, SampleSet]:
    """Split one scan's free samples into (free, certain_free).

    Certain-free: closer than ``r_dense`` to the scan origin and farther
    than ``tau`` from every endpoint of the same scan.
    """
    dense = np.linalg.norm(free.q - scan.origin, axis=1) < r_dense
    certain = np.zeros(len(free), dtype=bool)
    if dense.any():
        tree = tree if tree is not None else cKDTree(scan.points_world)
        # any endpoint within tau disqualifies, so the search can stop at tau
        dist, _ = tree.query(free.q[dense], k=1, distance_upper_bound=np.nextafter(tau, np.inf))
        certain[dense] = dist > tau
    out_certain = free.select(certain)
    out_certain.region[:] = CERTAIN
    return free.select(~certain), out_certain


def scan_samples(scan: Scan, cfg: MapConfig, seed: int) -> tuple[SampleSet, SampleSet, SampleSet, int]:
    rng = np.random.default_rng([seed, 303, scan.frame])
    surf, free, skipped = sample_rays(scan.origin, scan.points_world, scan.frame, cfg.truncation,
                                      cfg.surface_samples, cfg.free_samples, rng)
    free, certain = split_certain(free, scan, cfg.truncation, cfg.r_dense)
    return surf, free, certain, skipped


def build_pool(seq: ScanSequence, cfg: MapConfig, seed: int | None = None) -> SamplePool:
    """Sample every ray of every scan; per-frame RNG streams, assembled in frame order."""
    seed = cfg.seed if seed is None else seed
    parts = [scan_samples(scan, cfg, seed) for scan in seq]
    return SamplePool(
        surface=SampleSet.concat(p[0] for p in parts),
        free=SampleSet.concat(p[1] for p in parts),
        certain=SampleSet.concat(p[2] for p in parts),
        skipped_rays=sum(p[3] for p in parts),
    )
