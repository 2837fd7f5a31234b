"""Zero level set extraction, PLY files and 2D TSDF slices.

The lattice covers the occupancy mask (finest voxels holding scan
endpoints) dilated by one voxel; cells with a corner outside it are skipped
so never-observed space produces no surface.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._mc_tables import CORNERS, EDGES, TRI_TABLE
from .core_io import FormatError, atomic_write
from .grid import pack_keys, unpack_keys

_CORNERS = np.array(CORNERS, dtype=np.int64)
_EDGE_A = np.array([e[0] for e in EDGES])
_EDGE_B = np.array([e[1] for e in EDGES])
_TRI = np.full((256, 15), -1, dtype=np.int64)
for _case, _tris in enumerate(TRI_TABLE):
    _TRI[_case, : len(_tris)] = _tris

DEGENERATE_AREA = 1e-12


@dataclass
class TriangleMesh:
    vertices: np.ndarray    # (n, 3)
    triangles: np.ndarray   # (m, 3) vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    def __len__(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def marching_cubes(values: np.ndarray, origin, cell_size: float, valid: np.ndarray | None = None) -> TriangleMesh:
    """Triangulate the zero level set of a sampled lattice.

    ``values[i, j, k]`` is the field at ``origin + cell_size * (i, j, k)``.
    Corners strictly below zero count as inside.  Vertices on shared edges
    are welded; zero-area triangles are dropped.
    """
    values = np.asarray(values, dtype=np.float64)
    nx, ny, nz = values.shape
    if min(nx, ny, nz) < 2:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3)))
    valid = np.isfinite(values) if valid is None else (np.asarray(valid, bool) & np.isfinite(values))

    cell = np.stack(np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij"),
                    axis=-1).reshape(-1, 3)
    corner_ijk = cell[:, None, :] + _CORNERS[None]
    ci, cj, ck = corner_ijk[..., 0], corner_ijk[..., 1], corner_ijk[..., 2]
    ok = valid[ci, cj, ck].all(axis=1)
    cv = np.where(ok[:, None], values[ci, cj, ck], 1.0)
    case = ((cv < 0) << np.arange(8)).sum(axis=1)
    active = ok & (case > 0) & (case < 255)
    cell, cv, case = cell[active], cv[active], case[active]
    if not len(cell):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3)))

    # one row per emitted triangle, cell-major in lattice order
    tri_edges = _TRI[case].reshape(len(cell), 5, 3)
    has = tri_edges[:, :, 0] >= 0
    owner = np.repeat(np.arange(len(cell)), has.sum(axis=1))
    tri_edges = tri_edges[has]

    # global edge key: lower lattice endpoint and axis
    a, b = _EDGE_A[tri_edges], _EDGE_B[tri_edges]
    ca = cell[owner][:, None, :] + _CORNERS[a]
    cb = cell[owner][:, None, :] + _CORNERS[b]
    lower = np.minimum(ca, cb)
    axis = np.argmax(np.abs(cb - ca), axis=-1)
    key = np.ravel_multi_index((lower[..., 0], lower[..., 1], lower[..., 2]), (nx, ny, nz)) * 3 + axis
    # a crossing exactly on a lattice point belongs to that point, not to the edge,
    # so every cell touching it shares one vertex
    own = owner[:, None]
    va, vb = cv[own, a], cv[own, b]
    n_edges = nx * ny * nz * 3
    on_a = va == 0
    on_b = vb == 0
    key = np.where(on_a, n_edges + np.ravel_multi_index((ca[..., 0], ca[..., 1], ca[..., 2]), (nx, ny, nz)), key)
    key = np.where(on_b, n_edges + np.ravel_multi_index((cb[..., 0], cb[..., 1], cb[..., 2]), (nx, ny, nz)), key)
    uniq, inverse = np.unique(key.ravel(), return_inverse=True)

    # interpolate each unique key once
    first = np.zeros(len(uniq), dtype=np.int64)
    first[inverse[::-1]] = np.arange(key.size)[::-1]
    fva, fvb = va.ravel()[first], vb.ravel()[first]
    pa = ca.reshape(-1, 3)[first].astype(np.float64)
    pb = cb.reshape(-1, 3)[first].astype(np.float64)
    s = (-fva / (fvb - fva))[:, None]
    verts = np.asarray(origin, dtype=np.float64) + cell_size * (pa + s * (pb - pa))

    tris = inverse.reshape(-1, 3)
    mesh = TriangleMesh(verts, tris)
    keep = mesh.areas() > DEGENERATE_AREA
    return compact(TriangleMesh(verts, tris[keep]))


def compact(mesh: TriangleMesh) -> TriangleMesh:
    """Drop unreferenced vertices, keeping vertex order."""
    used = np.zeros(len(mesh.vertices), dtype=bool)
    used[mesh.triangles.ravel()] = True
    remap = np.cumsum(used) - 1
    return TriangleMesh(mesh.vertices[used], remap[mesh.triangles])


# --------------------------------------------------------------------------
# lattices over the observed region
# --------------------------------------------------------------------------


def dilated_mask(occupancy: np.ndarray, radius: int = 1) -> np.ndarray:
    """Packed keys of occupied voxels grown by ``radius`` voxels (26-neighborhood)."""
    ijk = unpack_keys(occupancy)
    r = np.arange(-radius, radius + 1)
    offs = np.array(list(itertools.product(r, r, r)), dtype=np.int64)
    return np.unique(pack_keys((ijk[:, None, :] + offs[None]).reshape(-1, 3)))


def _in_mask(points: np.ndarray, mask: np.ndarray, voxel_size: float) -> np.ndarray:
    """True where a point lies in the closed union of the mask voxels."""
    scaled = points / voxel_size
    lo = np.floor(scaled - 1e-9).astype(np.int64)
    hi = np.floor(scaled + 1e-9).astype(np.int64)
    out = np.zeros(len(points), dtype=bool)
    for pick in itertools.product((0, 1), repeat=3):
        ijk = np.where(np.array(pick, bool), hi, lo)
        keys = pack_keys(ijk)
        pos = np.minimum(np.searchsorted(mask, keys), len(mask) - 1)
        out |= mask[pos] == keys
    return out


@dataclass
class Lattice:
    origin: np.ndarray
    cell_size: float
    shape: tuple
    valid: np.ndarray   # (nx, ny, nz) bool

    def points(self) -> np.ndarray:
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij"), axis=-1)
        return self.origin + self.cell_size * idx.reshape(-1, 3)


def mask_lattice(occupancy: np.ndarray, voxel_size: float, cell_size: float) -> Lattice | None:
    if len(occupancy) == 0:
        return None
    mask = dilated_mask(occupancy)
    ijk = unpack_keys(mask)
    lo = ijk.min(axis=0) * voxel_size
    hi = (ijk.max(axis=0) + 1) * voxel_size
    origin = np.floor(lo / cell_size) * cell_size
    shape = tuple(int(n) for n in np.ceil((hi - origin) / cell_size - 1e-9).astype(np.int64) + 1)
    lat = Lattice(origin, cell_size, shape, np.zeros(shape, dtype=bool))
    lat.valid = _in_mask(lat.points(), mask, voxel_size).reshape(shape)
    return lat


def box_lattice(lo, hi, cell_size: float) -> Lattice:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    shape = tuple(int(n) for n in np.floor((hi - lo) / cell_size + 1e-9).astype(np.int64) + 1)
    return Lattice(lo, cell_size, shape, np.ones(shape, dtype=bool))


def _field_fn(model, t):
    if t is None:
        return model.query_static
    return lambda p: model.query(p, t)


def _lattice_for(model, cell_size: float, bounds) -> Lattice | None:
    if bounds is not None:
        return box_lattice(bounds[0], bounds[1], cell_size)
    return mask_lattice(model.grid.occupancy, model.grid.finest_voxel_size, cell_size)


def sample_lattice(model, lattice: Lattice, t=None) -> np.ndarray:
    """Field values on the lattice; NaN outside the valid region."""
    values = np.full(lattice.shape, np.nan)
    pts = lattice.points()[lattice.valid.ravel()]
    if len(pts):
        values[lattice.valid] = _field_fn(model, t)(pts)
    return values


def extract_mesh(model, cell_size: float, t: int | None = None, bounds=None) -> TriangleMesh:
    """Mesh the static field (``t=None``) or the field at frame ``t``.

    ``bounds=(lo, hi)`` replaces the occupancy mask with a full box, which is
    how analytic oracles (anything with ``query``/``query_static``) are meshed.
    """
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    lat = _lattice_for(model, cell_size, bounds)
    if lat is None:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3)))
    values = sample_lattice(model, lat, t)
    return marching_cubes(values, lat.origin, cell_size, lat.valid)


# --------------------------------------------------------------------------
# PLY
# --------------------------------------------------------------------------


def export_ply(mesh: TriangleMesh, path, encoding: str = "binary_le") -> None:
    """Vertices as float32 x/y/z, faces as uchar-counted int32 index lists."""
    if encoding not in ("ascii", "binary_le"):
        raise ValueError(f"unknown PLY encoding {encoding!r}")
    fmt = "ascii" if encoding == "ascii" else "binary_little_endian"
    header = (f"ply\nformat {fmt} 1.0\nelement vertex {len(mesh.vertices)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              f"element face {len(mesh.triangles)}\nproperty list uchar int vertex_indices\nend_header\n")
    v32 = mesh.vertices.astype("<f4")
    with atomic_write(path) as fh:
        fh.write(header.encode("ascii"))
        if encoding == "ascii":
            lines = [f"{x!r} {y!r} {z!r}" for x, y, z in v32.tolist()]
            lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))
        else:
            fh.write(v32.tobytes())
            face = np.empty(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            face["n"] = 3
            face["idx"] = mesh.triangles
            fh.write(face.tobytes())


_PLY_TYPES = {"char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2", "int": "i4", "uint": "u4",
              "float": "f4", "double": "f8", "int8": "i1", "uint8": "u1", "int16": "i2", "uint16": "u2",
              "int32": "i4", "uint32": "u4", "float32": "f4", "float64": "f8"}


def read_ply(path) -> TriangleMesh:
    """Read the vertex/face subset of a PLY file (ascii or binary little-endian)."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    lines = data[:end].decode("ascii").splitlines()
    fmt, elements = None, []
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            elements[-1][2].append(tok[1:])
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt}")
    verts = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    if fmt == "ascii":
        rows = data[body_start:].decode("ascii").split("\n")
        pos = 0
        for name, count, props in elements:
            chunk = [r.split() for r in rows[pos:pos + count]]
            pos += count
            if name == "vertex":
                names = [p[-1] for p in props]
                arr = np.array(chunk, dtype=np.float64).reshape(count, len(names))
                verts = arr[:, [names.index(c) for c in "xyz"]].astype(np.float32).astype(np.float64)
            elif name == "face":
                faces = np.array([[int(v) for v in r[1:4]] for r in chunk], dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(verts, faces)
    pos = body_start
    for name, count, props in elements:
        if any(p[0] == "list" for p in props):
            if name != "face" or len(props) != 1:
                raise FormatError(f"{path}: unsupported list element {name}")
            _, ctype, itype, _ = props[0]
            dt = np.dtype([("n", "<" + _PLY_TYPES[ctype]), ("idx", "<" + _PLY_TYPES[itype], (3,))])
            rec = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            if count and np.any(rec["n"] != 3):
                raise FormatError(f"{path}: only triangle faces are supported")
            faces = rec["idx"].astype(np.int64)
        else:
            dt = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in props])
            rec = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            if name == "vertex":
                verts = np.stack([rec[c] for c in "xyz"], axis=1).astype(np.float64)
        pos += dt.itemsize * count
    return TriangleMesh(verts, faces)


# --------------------------------------------------------------------------
# slices
# --------------------------------------------------------------------------

_AXIS = {"x": 0, "y": 1, "z": 2}


@dataclass
class SliceGrid:
    axis: str
    coordinate: float
    cell_size: float
    clamp: float
    u_min: float
    v_min: float
    values: np.ndarray    # (nv, nu); u/v are the remaining axes in x, y, z order

    def to_csv(self) -> str:
        nv, nu = self.values.shape
        head = "axis,coordinate,cell_size,clamp,u_min,v_min,nu,nv\n"
        head += f"{self.axis},{self.coordinate!r},{self.cell_size!r},{self.clamp!r},{self.u_min!r},{self.v_min!r},{nu},{nv}\n"
        body = "\n".join(",".join(repr(float(v)) for v in row) for row in self.values)
        return head + body + ("\n" if nv else "")

    @classmethod
    def from_csv(cls, text: str) -> "SliceGrid":
        lines = text.strip("\n").split("\n")
        meta = dict(zip(lines[0].split(","), lines[1].split(",")))
        nu, nv = int(meta["nu"]), int(meta["nv"])
        vals = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:2 + nv]]).reshape(nv, nu)
        return cls(meta["axis"], float(meta["coordinate"]), float(meta["cell_size"]), float(meta["clamp"]),
                   float(meta["u_min"]), float(meta["v_min"]), vals)


def slice_grid(model, axis: str, coordinate: float, cell_size: float, clamp: float = 0.3,
               t: int | None = None, bounds=None) -> SliceGrid:
    """Field values clamped to +-clamp on a planar grid over the mask's bounding rectangle."""
    if not clamp > 0:
        raise ValueError("clamp must be positive")
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    ax = _AXIS[axis]
    uv = [i for i in range(3) if i != ax]
    if bounds is None:
        ijk = unpack_keys(model.grid.occupancy)
        vs = model.grid.finest_voxel_size
        lo, hi = ijk.min(axis=0) * vs, (ijk.max(axis=0) + 1) * vs
    else:
        lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    nu, nv = (int(np.floor((hi[i] - lo[i]) / cell_size + 1e-9)) + 1 for i in uv)
    gu, gv = np.meshgrid(lo[uv[0]] + cell_size * np.arange(nu), lo[uv[1]] + cell_size * np.arange(nv))
    pts = np.empty((gu.size, 3))
    pts[:, ax] = coordinate
    pts[:, uv[0]] = gu.ravel()
    pts[:, uv[1]] = gv.ravel()
    vals = np.asarray(_field_fn(model, t)(pts), dtype=np.float64).reshape(nv, nu)
    return SliceGrid(axis, float(coordinate), float(cell_size), float(clamp), float(lo[uv[0]]),
                     float(lo[uv[1]]), np.clip(vals, -clamp, clamp))


def export_slice(model, path, axis: str, coordinate: float, cell_size: float, clamp: float = 0.3,
                 t: int | None = None, bounds=None) -> SliceGrid:
    grid = slice_grid(model, axis, coordinate, cell_size, clamp, t, bounds)
    with atomic_write(path, "w") as fh:
        fh.write(grid.to_csv())
    return grid
