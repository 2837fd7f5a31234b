"""Synthetic dynamic scenes with an exact signed distance oracle.

A spinning range sensor moves inside a box room while sphere/box movers
translate through it.  Rays are sphere-traced against the analytic SDF, so
every endpoint is exact and its label (static wall vs mover) is known.

Sign convention matches the map: free space positive, inside walls or
objects negative.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core_io import (DYNAMIC, STATIC, Pose, ScanSequence, assemble_sequence, atomic_write, write_labels,
                      write_poses_kitti, write_scan_bin)

HIT_TOL = 1e-7
MAX_MARCH = 4000


@dataclass
class Mover:
    kind: str                 # "sphere" or "box"
    size: list                # [radius] or [hx, hy, hz]
    start: list               # center at frame start_frame
    velocity: list            # meters per frame
    start_frame: int = 0
    end_frame: int | None = None   # motion stops here; None = never

    def center(self, t) -> np.ndarray:
        t = float(t)
        end = np.inf if self.end_frame is None else self.end_frame
        steps = np.clip(t, self.start_frame, end) - self.start_frame
        return np.asarray(self.start, dtype=np.float64) + steps * np.asarray(self.velocity, dtype=np.float64)

    def sdf(self, p: np.ndarray, t) -> np.ndarray:
        d = np.asarray(p, dtype=np.float64) - self.center(t)
        if self.kind == "sphere":
            return np.linalg.norm(d, axis=-1) - self.size[0]
        if self.kind == "box":
            q = np.abs(d) - np.asarray(self.size, dtype=np.float64)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        raise ValueError(f"unknown mover kind {self.kind!r}")

    def extent(self) -> np.ndarray:
        return np.full(3, self.size[0]) if self.kind == "sphere" else np.asarray(self.size, dtype=np.float64)


@dataclass
class SceneSpec:
    room_min: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    room_max: list = field(default_factory=lambda: [10.0, 8.0, 4.0])
    movers: list = field(default_factory=list)
    sensor_start: list = field(default_factory=lambda: [4.0, 2.5, 1.5])
    sensor_end: list = field(default_factory=lambda: [6.0, 2.5, 1.5])
    yaw_start: float = 0.0
    yaw_end: float = 0.3
    azimuth_count: int = 360
    elevation_count: int = 16
    elevation_min_deg: float = -25.0
    elevation_max_deg: float = 25.0
    max_range: float = 30.0
    frames: int = 60
    seed: int = 0
    range_noise: float = 0.0
    gt_spacing: float = 0.05
    gt_observed_radius: float = 0.25

    def __post_init__(self):
        self.movers = [m if isinstance(m, Mover) else Mover(**m) for m in self.movers]
        self.validate()

    def validate(self) -> None:
        lo, hi = np.asarray(self.room_min, float), np.asarray(self.room_max, float)
        if np.any(hi <= lo):
            raise ValueError("room_max must exceed room_min")
        if self.frames < 1 or self.azimuth_count < 1 or self.elevation_count < 1:
            raise ValueError("frames and ray counts must be positive")
        for t in range(self.frames):
            o = self.sensor_origin(t)
            if np.any(o <= lo) or np.any(o >= hi):
                raise ValueError(f"sensor leaves the room at frame {t}")
            for m in self.movers:
                c, e = m.center(t), m.extent()
                if np.any(c - e <= lo) or np.any(c + e >= hi):
                    raise ValueError(f"{m.kind} mover leaves the room at frame {t}")

    def sensor_origin(self, t) -> np.ndarray:
        a = 0.0 if self.frames == 1 else t / (self.frames - 1)
        s, e = np.asarray(self.sensor_start, float), np.asarray(self.sensor_end, float)
        return s + a * (e - s)

    def sensor_pose(self, t) -> Pose:
        a = 0.0 if self.frames == 1 else t / (self.frames - 1)
        return Pose.from_yaw(self.yaw_start + a * (self.yaw_end - self.yaw_start), self.sensor_origin(t))

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, elevation-major."""
        az = np.arange(self.azimuth_count) * (2 * np.pi / self.azimuth_count)
        el = np.radians(np.linspace(self.elevation_min_deg, self.elevation_max_deg, self.elevation_count))
        el, az = np.meshgrid(el, az, indexing="ij")
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1).reshape(-1, 3)

    def static_variant(self) -> "SceneSpec":
        d = asdict(self)
        d["movers"] = []
        return SceneSpec(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def default_scene(seed: int = 0) -> SceneSpec:
    """10 x 8 x 4 m room; a 0.5 m sphere crosses 4 m between frames 10 and 50."""
    sphere = Mover("sphere", [0.5], [3.0, 5.0, 1.5], [0.1, 0.0, 0.0], start_frame=10, end_frame=50)
    return SceneSpec(movers=[sphere], seed=seed)


# --------------------------------------------------------------------------
# oracle
# --------------------------------------------------------------------------


def room_sdf(spec: SceneSpec, p: np.ndarray) -> np.ndarray:
    """Distance to the nearest wall, positive inside the room."""
    p = np.asarray(p, dtype=np.float64)
    lo, hi = np.asarray(spec.room_min, float), np.asarray(spec.room_max, float)
    inside = np.minimum(p - lo, hi - p).min(axis=-1)
    q = np.maximum(lo - p, p - hi)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    return np.where(inside >= 0, inside, -outside)


def component_sdfs(spec: SceneSpec, p: np.ndarray, t) -> np.ndarray:
    """Stack of (room, mover_1, ..., mover_m) signed distances along axis 0."""
    return np.stack([room_sdf(spec, p)] + [m.sdf(p, t) for m in spec.movers])


def oracle_sdf(spec: SceneSpec, p, t) -> np.ndarray | float:
    out = component_sdfs(spec, p, t).min(axis=0)
    return float(out) if out.ndim == 0 else out


def static_oracle_sdf(spec: SceneSpec, p) -> np.ndarray | float:
    out = room_sdf(spec, p)
    return float(out) if np.ndim(out) == 0 else out


def swept_volume_sdf(spec: SceneSpec, p, frames=None) -> np.ndarray:
    """Signed distance to the union of all mover placements over the given frames."""
    frames = range(spec.frames) if frames is None else frames
    p = np.asarray(p, dtype=np.float64)
    out = np.full(p.shape[:-1], np.inf)
    for m in spec.movers:
        for t in frames:
            out = np.minimum(out, m.sdf(p, t))
    return out


# --------------------------------------------------------------------------
# sensor simulation
# --------------------------------------------------------------------------


def trace(spec: SceneSpec, origin: np.ndarray, dirs: np.ndarray, t) -> tuple[np.ndarray, np.ndarray]:
    """Sphere-trace rays against the scene at frame t.

    Returns hit distances (inf for misses beyond max range) and the index of
    the hit component (0 = room, i >= 1 = mover i-1).
    """
    dist = np.zeros(len(dirs))
    active = np.arange(len(dirs))
    hit = np.full(len(dirs), np.inf)
    for _ in range(MAX_MARCH):
        if not len(active):
            break
        p = origin + dist[active, None] * dirs[active]
        d = oracle_sdf(spec, p, t)
        done = d < HIT_TOL
        hit[active[done]] = dist[active[done]]
        dist[active] += d
        gone = dist[active] > spec.max_range
        active = active[~done & ~gone]
    hit[hit > spec.max_range] = np.inf
    pts = origin + np.where(np.isfinite(hit), hit, 0.0)[:, None] * dirs
    comp = np.argmin(component_sdfs(spec, pts, t), axis=0)
    return hit, comp


@dataclass
class GroundTruth:
    labels: list             # per-frame int arrays, 0 static / 1 dynamic
    static_cloud: np.ndarray
    spec: SceneSpec

    def oracle(self, p, t):
        return oracle_sdf(self.spec, p, t)

    def static_oracle(self, p):
        return static_oracle_sdf(self.spec, p)


def simulate_frame(spec: SceneSpec, t: int) -> tuple[np.ndarray, np.ndarray, Pose]:
    """World-frame endpoints, labels and sensor pose of frame t."""
    pose = spec.sensor_pose(t)
    dirs = spec.ray_directions() @ pose.rotation.T
    rng_hit, comp = trace(spec, pose.translation, dirs, t)
    keep = np.isfinite(rng_hit)
    r = rng_hit[keep]
    if spec.range_noise > 0:
        rng = np.random.default_rng([spec.seed, 505, t])
        r = r + rng.normal(0.0, spec.range_noise, size=r.shape)
    pts = pose.translation + r[:, None] * dirs[keep]
    labels = np.where(comp[keep] > 0, DYNAMIC, STATIC)
    return pts, labels, pose


def wall_samples(spec: SceneSpec, spacing: float) -> np.ndarray:
    """Regular grid of points on the six room faces."""
    lo, hi = np.asarray(spec.room_min, float), np.asarray(spec.room_max, float)
    out = []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        ua = np.arange(lo[a] + spacing / 2, hi[a], spacing)
        ub = np.arange(lo[b] + spacing / 2, hi[b], spacing)
        ga, gb = np.meshgrid(ua, ub, indexing="ij")
        for value in (lo[axis], hi[axis]):
            face = np.empty((ga.size, 3))
            face[:, axis] = value
            face[:, a] = ga.ravel()
            face[:, b] = gb.ravel()
            out.append(face)
    return np.concatenate(out)


def simulate(spec: SceneSpec) -> tuple[ScanSequence, GroundTruth, list[Pose], list[np.ndarray]]:
    """Simulate all frames.

    Returns the world-frame sequence, ground truth, sensor poses and the
    sensor-frame scans (what a ``.bin`` file would hold).
    """
    frames = [simulate_frame(spec, t) for t in range(spec.frames)]
    poses = [f[2] for f in frames]
    raw = [pose.apply_inverse(pts) for pts, _, pose in frames]
    seq = assemble_sequence(raw, poses)
    labels = [f[1] for f in frames]
    static_pts = np.concatenate([pts[lab == STATIC] for pts, lab, _ in frames])
    walls = wall_samples(spec, spec.gt_spacing)
    near, _ = cKDTree(static_pts).query(walls, k=1, distance_upper_bound=spec.gt_observed_radius)
    gt = GroundTruth(labels, walls[np.isfinite(near)], spec)
    return seq, gt, poses, raw


def write_dataset(spec: SceneSpec, root) -> tuple[ScanSequence, GroundTruth]:
    """Write scans, poses, labels, the observed static wall cloud and the scene file."""
    from .mesher import TriangleMesh, export_ply

    root = Path(root)
    seq, gt, poses, raw = simulate(spec)
    for t, (pts, lab) in enumerate(zip(raw, gt.labels)):
        write_scan_bin(root / "velodyne" / f"{t:06d}.bin", pts)
        write_labels(root / "labels" / f"{t:06d}.label", lab)
    write_poses_kitti(root / "poses.txt", poses)
    export_ply(TriangleMesh(gt.static_cloud, np.zeros((0, 3), dtype=np.int64)), root / "gt_static.ply", "binary_le")
    with atomic_write(root / "scene.json", "w") as fh:
        fh.write(spec.to_json())
    return seq, gt
