"""The 4D signed distance field F(p, t) = sum_k w_p^k phi_k(t).

``w_p`` is decoded from the grid feature at ``p``; ``w_p^1`` (index 0 here)
is the static signed distance.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisTable, init_dct
from .core_io import DYNAMIC, STATIC, FormatError, MapConfig, atomic_write, config_from_text
from .decoder import MlpParams, Tape
from .grid import FeatureGrid, GridLevel, LevelStencil, pack_keys, unpack_keys

CHUNK = 1 << 16


@dataclass
class ForwardCache:
    stencils: list[LevelStencil]
    tape: Tape
    weights: np.ndarray     # (n, K)
    t: np.ndarray           # (n,)


class FieldModel:
    def __init__(self, grid: FeatureGrid, mlp: MlpParams, basis: BasisTable, cfg: MapConfig):
        if basis.basis_count != mlp.out_dim:
            raise ValueError("basis count does not match decoder output size")
        if grid.feature_dim != mlp.in_dim:
            raise ValueError("feature size does not match decoder input size")
        self.grid = grid
        self.mlp = mlp
        self.basis = basis
        self.cfg = cfg

    @classmethod
    def create(cls, grid: FeatureGrid, frame_count: int, cfg: MapConfig) -> "FieldModel":
        mlp = MlpParams.init(cfg.feature_dim, cfg.mlp_hidden_width, cfg.mlp_hidden_layers,
                             cfg.basis_count, cfg.seed)
        return cls(grid, mlp, init_dct(frame_count, cfg.basis_count), cfg)

    @property
    def frame_count(self) -> int:
        return self.basis.frame_count

    # -- inference --------------------------------------------------------

    def decode(self, points: np.ndarray) -> np.ndarray:
        """Basis weights (n, K) at each point, evaluated in chunks."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty((len(pts), self.basis.basis_count))
        for s in range(0, len(pts), CHUNK):
            f, _ = self.grid.interpolate(pts[s:s + CHUNK])
            out[s:s + CHUNK], _ = self.mlp.forward(f)
        return out

    def query(self, points: np.ndarray, t) -> np.ndarray | float:
        single = np.ndim(points) == 1
        w = self.decode(points)
        rows = self.basis.rows(np.broadcast_to(np.asarray(t, dtype=np.int64), (len(w),)))
        d = np.einsum("nk,nk->n", w, rows)
        return float(d[0]) if single else d

    def query_static(self, points: np.ndarray) -> np.ndarray | float:
        single = np.ndim(points) == 1
        w1 = self.decode(points)[:, 0]
        return float(w1[0]) if single else w1

    # -- training hooks -----------------------------------------------------

    def forward(self, points: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        """Batched F(p, t) keeping everything needed for :meth:`backward`."""
        f, stencils = self.grid.interpolate(points)
        w, tape = self.mlp.forward(f)
        t = np.asarray(t, dtype=np.int64)
        d = np.einsum("nk,nk->n", w, self.basis.rows(t))
        return d, ForwardCache(stencils, tape, w, t)

    def backward(self, cache: ForwardCache, d_value: np.ndarray, d_static: np.ndarray | None = None) -> None:
        """Accumulate gradients given dL/dF per query and optionally dL/dw^1."""
        rows = self.basis.values[cache.t]
        dw = d_value[:, None] * rows
        if d_static is not None:
            dw[:, 0] += d_static
        self.basis.accumulate_grad_batch(cache.t, cache.weights, d_value)
        df = self.mlp.backward(cache.tape, dw)
        self.grid.scatter_grad(cache.stencils, df)

    def zero_grad(self) -> None:
        self.grid.zero_grad()
        self.mlp.zero_grad()
        self.basis.zero_grad()


def query(model: FieldModel, p, t):
    return model.query(p, t)


def query_static(model: FieldModel, p):
    return model.query_static(p)


_AXES = np.eye(3)


def probe_points(points: np.ndarray, eps: float) -> np.ndarray:
    """The six central-difference probes p +- eps*e_axis, shaped (6, n, 3).

    Order: +x, -x, +y, -y, +z, -z.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    offs = np.concatenate([[eps * a, -eps * a] for a in _AXES]).reshape(6, 1, 3)
    return pts[None] + offs


def numerical_gradient(model, p, t, eps: float) -> np.ndarray:
    """Central-difference spatial gradient of ``model.query`` with step ``eps``.

    ``model`` is anything exposing ``query(points, t)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    single = np.ndim(p) == 1
    probes = probe_points(p, eps)
    n = probes.shape[1]
    vals = np.asarray(model.query(probes.reshape(-1, 3), t), dtype=np.float64).reshape(6, n)
    grad = np.stack([vals[0] - vals[1], vals[2] - vals[3], vals[4] - vals[5]], axis=1) / (2 * eps)
    return grad[0] if single else grad


def classify_point(model, p, d_static: float):
    """Dynamic iff the static signed distance is strictly above ``d_static``."""
    w1 = np.asarray(model.query_static(p), dtype=np.float64)
    labels = np.where(w1 > d_static, DYNAMIC, STATIC)
    return int(labels) if labels.ndim == 0 else labels


# --------------------------------------------------------------------------
# checkpoint
# --------------------------------------------------------------------------

MAGIC = b"TSDF4DCK"
VERSION = 1
_FEATURE_F64 = 1


def _vertex_dtype(d: int) -> np.dtype:
    return np.dtype([("ijk", "<i4", (3,)), ("f", "<f8", (d,))])


def checkpoint_bytes(model: FieldModel) -> bytes:
    """Little-endian checkpoint: header, basis, grid, occupancy, decoder."""
    buf = io.BytesIO()
    cfg_text = model.cfg.to_text().encode("utf-8")
    g, mlp, basis = model.grid, model.mlp, model.basis
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(cfg_text)))
    buf.write(cfg_text)
    buf.write(struct.pack("<IIIIB", basis.frame_count, basis.basis_count, g.feature_dim, len(g.levels),
                          _FEATURE_F64))
    buf.write(basis.values.astype("<f8").tobytes())
    vdt = _vertex_dtype(g.feature_dim)
    for lv in g.levels:
        rec = np.empty(len(lv), dtype=vdt)
        rec["ijk"] = unpack_keys(lv.keys)
        rec["f"] = lv.features
        buf.write(struct.pack("<dQ", lv.voxel_size, len(lv)))
        buf.write(rec.tobytes())
    occ = unpack_keys(g.occupancy).astype("<i4")
    buf.write(struct.pack("<Q", len(occ)))
    buf.write(occ.tobytes())
    buf.write(struct.pack("<I", len(mlp.weights)))
    for w, b in zip(mlp.weights, mlp.biases):
        buf.write(struct.pack("<II", *w.shape))
        buf.write(w.astype("<f8").tobytes())
        buf.write(b.astype("<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(model: FieldModel, path) -> None:
    data = checkpoint_bytes(model)
    with atomic_write(path) as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count)


def load_checkpoint(path) -> FieldModel:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    cfg = config_from_text(r.take(cfg_len).decode("utf-8"))
    n, k, d, n_levels, ftype = r.unpack("<IIIIB")
    if ftype != _FEATURE_F64:
        raise FormatError(f"{path}: unknown feature dtype code {ftype}")
    basis = BasisTable(r.array("<f8", n * k).reshape(n, k))
    vdt = _vertex_dtype(d)
    levels = []
    for _ in range(n_levels):
        vs, count = r.unpack("<dQ")
        rec = r.array(vdt, count)
        levels.append(GridLevel(vs, pack_keys(rec["ijk"].astype(np.int64)), rec["f"].astype(np.float64)))
    (n_occ,) = r.unpack("<Q")
    occ = pack_keys(r.array("<i4", 3 * n_occ).reshape(-1, 3).astype(np.int64))
    (n_layers,) = r.unpack("<I")
    ws, bs = [], []
    for _ in range(n_layers):
        fi, fo = r.unpack("<II")
        ws.append(r.array("<f8", fi * fo).reshape(fi, fo).copy())
        bs.append(r.array("<f8", fo).copy())
    return FieldModel(FeatureGrid(levels, occ), MlpParams(ws, bs), basis, cfg)
