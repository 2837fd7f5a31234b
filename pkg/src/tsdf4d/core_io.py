"""Domain primitives and file formats shared by the mapping pipeline.

Points are carried as ``(n, 3)`` float64 arrays in meters.  Frames are
0-based integer scan indices.
"""

from __future__ import annotations

import contextlib
import dataclasses
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

STATIC = 0
DYNAMIC = 1


class FormatError(ValueError):
    """Malformed input data (bad file layout, invalid pose, bad config)."""


@contextlib.contextmanager
def atomic_write(path, mode: str = "wb") -> Iterator:
    """Open a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": "\n"})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# poses, scans, sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise FormatError("pose contains non-finite values")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise FormatError("pose rotation is not a proper rotation")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation) -> "Pose":
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation


@dataclass
class Scan:
    frame: int
    origin: np.ndarray
    points_world: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.points_world = np.asarray(self.points_world, dtype=np.float64).reshape(-1, 3)
        if len(self.points_world) == 0:
            raise FormatError(f"scan {self.frame} has no points")
        if not (np.all(np.isfinite(self.points_world)) and np.all(np.isfinite(self.origin))):
            raise FormatError(f"scan {self.frame} has non-finite values")

    def __len__(self) -> int:
        return len(self.points_world)


@dataclass
class ScanSequence:
    scans: list[Scan]

    def __post_init__(self):
        if not self.scans:
            raise FormatError("a scan sequence needs at least one scan")
        frames = [s.frame for s in self.scans]
        if frames != list(range(len(frames))):
            raise FormatError("scan frames must be the contiguous range 0..N-1")

    @property
    def frame_count(self) -> int:
        return len(self.scans)

    def __len__(self) -> int:
        return len(self.scans)

    def __iter__(self):
        return iter(self.scans)

    def __getitem__(self, i) -> Scan:
        return self.scans[i]

    def all_points(self) -> np.ndarray:
        return np.concatenate([s.points_world for s in self.scans])

    def point_frames(self) -> np.ndarray:
        return np.concatenate([np.full(len(s), s.frame, dtype=np.int64) for s in self.scans])


def assemble_sequence(raw_scans: Sequence[np.ndarray], poses: Sequence[Pose]) -> ScanSequence:
    """Move sensor-frame scans into the world frame; origin = pose translation."""
    if len(raw_scans) != len(poses):
        raise FormatError(f"{len(raw_scans)} scans but {len(poses)} poses")
    scans = [
        Scan(frame=i, origin=pose.translation.copy(), points_world=pose.apply(pts))
        for i, (pts, pose) in enumerate(zip(raw_scans, poses))
    ]
    return ScanSequence(scans)


# --------------------------------------------------------------------------
# KITTI-style files
# --------------------------------------------------------------------------


def load_scan_bin(path) -> np.ndarray:
    """Read a float32 (x, y, z, intensity) point file; intensity is dropped.

    Records with a non-finite coordinate are rejected and reported with a
    single ``UserWarning`` carrying the count.
    """
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    ok = np.all(np.isfinite(pts), axis=1)
    if not ok.all():
        warnings.warn(f"{path}: {int((~ok).sum())} non-finite records rejected", stacklevel=2)
        pts = pts[ok]
    return pts


def write_scan_bin(path, points: np.ndarray, intensity: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros((len(points), 4), dtype="<f4")
    rec[:, :3] = points
    if intensity is not None:
        rec[:, 3] = intensity
    with atomic_write(path) as fh:
        fh.write(rec.tobytes())


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def load_poses_kitti(path, count: int) -> list[Pose]:
    """Parse ``count`` poses from a 12-reals-per-line (row-major 3x4) file."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) < count:
        raise FormatError(f"{path}: need {count} poses, found {len(lines)}")
    poses = []
    for lineno, line in enumerate(lines[:count], start=1):
        try:
            vals = np.array([float(v) for v in line.split()])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        if vals.size != 12 or not np.all(np.isfinite(vals)):
            raise FormatError(f"{path}:{lineno}: expected 12 finite reals")
        m = vals.reshape(3, 4)
        r = m[:, :3]
        if np.linalg.det(r) <= 0 or np.abs(r.T @ r - np.eye(3)).max() > 1e-3:
            raise FormatError(f"{path}:{lineno}: rotation is not orthonormal with det +1")
        poses.append(Pose(_orthonormalize(r), m[:, 3]))
    return poses


def write_poses_kitti(path, poses: Sequence[Pose]) -> None:
    with atomic_write(path, "w") as fh:
        for pose in poses:
            row = np.concatenate([pose.rotation, pose.translation[:, None]], axis=1).ravel()
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_labels(path, labels) -> None:
    """One little-endian uint32 per point: 0 static, 1 dynamic."""
    arr = np.asarray(labels, dtype=np.int64).ravel()
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValueError("labels must be 0 (static) or 1 (dynamic)")
    with atomic_write(path) as fh:
        fh.write(arr.astype("<u4").tobytes())


def read_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
    return np.frombuffer(raw, dtype="<u4").astype(np.int64)


# Dataset directory layout (KITTI odometry style):
#   <root>/velodyne/000000.bin ...   <root>/poses.txt   <root>/labels/000000.label ...

def scan_files(root) -> list[Path]:
    files = sorted((Path(root) / "velodyne").glob("*.bin"))
    if not files:
        raise FormatError(f"{root}: no velodyne/*.bin scans")
    return files


def load_sequence(root) -> ScanSequence:
    files = scan_files(root)
    poses = load_poses_kitti(Path(root) / "poses.txt", len(files))
    return assemble_sequence([load_scan_bin(f) for f in files], poses)


def load_label_dir(root) -> list[np.ndarray] | None:
    d = Path(root) / "labels"
    if not d.is_dir():
        return None
    return [read_labels(d / (f.stem + ".label")) for f in scan_files(root)]


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass
class MapConfig:
    # model and training defaults
    levels: int = 2
    feature_dim: int = 8
    basis_count: int = 32
    mlp_hidden_layers: int = 2
    mlp_hidden_width: int = 64
    surface_samples: int = 5
    free_samples: int = 15
    lambda_e: float = 0.02
    lambda_f: float = 0.25
    lambda_c: float = 0.2
    # scene-dependent
    finest_voxel_size: float = 0.3
    level_scale_factor: float = 2.0
    truncation: float = 0.5
    r_dense: float = 15.0
    d_static: float = 0.16
    # optimization
    learning_rate: float = 0.01
    train_steps: int = 20000
    batch_size: int = 4096
    eps_start: float | None = None
    eps_end: float | None = None
    eps_decay_fraction: float = 0.7
    seed: int = 0
    workers: int = 1
    deterministic: bool = False

    def __post_init__(self):
        if self.eps_start is None:
            self.eps_start = self.voxel_size(self.levels - 1)
        if self.eps_end is None:
            self.eps_end = self.finest_voxel_size / 4
        self.validate()

    def voxel_size(self, level: int) -> float:
        """Voxel edge of a 0-based level; level 0 is the finest."""
        return self.finest_voxel_size * self.level_scale_factor**level

    def validate(self) -> None:
        positive = ["levels", "feature_dim", "mlp_hidden_width", "surface_samples", "finest_voxel_size",
                    "truncation", "r_dense", "learning_rate", "batch_size", "eps_start", "eps_end", "workers"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise FormatError(f"config: {name} must be positive")
        if self.basis_count < 2:
            raise FormatError("config: basis_count must be >= 2")
        if self.level_scale_factor <= 1:
            raise FormatError("config: level_scale_factor must be > 1")
        if self.eps_start < self.eps_end:
            raise FormatError("config: eps_start must be >= eps_end")
        if not 0 < self.eps_decay_fraction <= 1:
            raise FormatError("config: eps_decay_fraction must be in (0, 1]")
        for name in ("mlp_hidden_layers", "free_samples", "train_steps", "d_static", "seed",
                     "lambda_e", "lambda_f", "lambda_c"):
            if getattr(self, name) < 0:
                raise FormatError(f"config: {name} must be nonnegative")

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(self).items())

    def replace(self, **changes) -> "MapConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(MapConfig)}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    v = value.strip()
    try:
        if kind == "int":
            return int(v)
        if kind == "bool":
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if kind == "float | None" and v.lower() in ("none", "auto", ""):
            return None
        return float(v)
    except ValueError:
        raise FormatError(f"config: bad value for {key}: {value!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def parse_overrides(items: Sequence[str]) -> dict:
    return parse_config_text("\n".join(items))


def load_config(path=None, overrides: Sequence[str] = (), **forced) -> MapConfig:
    """Build a config with precedence defaults < file < overrides < ``forced``."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    values.update(parse_overrides(overrides))
    values.update({k: v for k, v in forced.items() if v is not None})
    return MapConfig(**values)


def config_from_text(text: str) -> MapConfig:
    return MapConfig(**parse_config_text(text))
