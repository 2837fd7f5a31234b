"""Reconstruction and dynamic-segmentation metrics.

Reconstruction uses the usual mean nearest-neighbor definitions with no
distance cap: accuracy = mean over predicted points of the distance to the
ground truth, completion = the reverse, Chamfer-L1 = their mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core_io import DYNAMIC, STATIC

DEFAULT_DENSITY = 1e4   # mesh sample points per square meter


@dataclass
class ReconReport:
    completion: float     # cm
    accuracy: float       # cm
    chamfer_l1: float     # cm
    f_score: float        # percent
    precision: float      # percent
    recall: float         # percent
    threshold: float      # cm
    pred_points: int = 0
    gt_points: int = 0
    sample_density: float | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)

    def to_text(self) -> str:
        lines = [
            "reconstruction",
            f"  completion  {self.completion:10.4f} cm",
            f"  accuracy    {self.accuracy:10.4f} cm",
            f"  chamfer-L1  {self.chamfer_l1:10.4f} cm",
            f"  F-score     {self.f_score:10.4f} %  (threshold {self.threshold:g} cm)",
            "  note: no distance cap applied to completion",
        ]
        if self.sample_density is not None:
            lines.append(f"  mesh sampled at {self.sample_density:g} points/m^2")
        return "\n".join(lines) + "\n\n" + key_values(self.as_dict())


@dataclass
class SegReport:
    SA: float | None
    DA: float | None
    AA: float | None
    counts: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"SA": self.SA, "DA": self.DA, "AA": self.AA, **self.counts}

    def to_text(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.2f} %"
        return (f"segmentation\n  SA  {fmt(self.SA)}\n  DA  {fmt(self.DA)}\n  AA  {fmt(self.AA)}\n\n"
                + key_values(self.as_dict()))


def key_values(d: dict) -> str:
    def fmt(v):
        if v is None:
            return "nan"
        return repr(float(v)) if isinstance(v, float) else str(v)
    return "".join(f"{k}={fmt(v)}\n" for k, v in d.items())


def parse_key_values(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if "=" in line and " " not in line.split("=", 1)[0]:
            k, v = line.split("=", 1)
            out[k] = float(v)
    return out


def nn_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Distance from each src point to its nearest dst point."""
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def f_score(precision: float, recall: float) -> float:
    """Harmonic mean of two fractions, in percent."""
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


def recon_metrics(pred: np.ndarray, gt: np.ndarray, threshold_cm: float, density: float | None = None) -> ReconReport:
    """Metrics between predicted surface samples and ground truth points (meters in, cm out)."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if not len(pred) or not len(gt):
        raise ValueError("reconstruction metrics need nonempty point sets")
    d_pred = nn_distances(pred, gt) * 100.0
    d_gt = nn_distances(gt, pred) * 100.0
    acc, comp = float(d_pred.mean()), float(d_gt.mean())
    precision = float((d_pred <= threshold_cm).mean())
    recall = float((d_gt <= threshold_cm).mean())
    return ReconReport(comp, acc, (comp + acc) / 2, f_score(precision, recall), 100 * precision, 100 * recall,
                       threshold_cm, len(pred), len(gt), density)


def sample_mesh(mesh, density: float = DEFAULT_DENSITY, seed: int = 0) -> np.ndarray:
    """Uniform area-weighted surface samples, about ``density`` per square meter."""
    areas = mesh.areas()
    total = float(areas.sum())
    n = max(int(round(total * density)), 1 if total > 0 else 0)
    if n == 0:
        return np.zeros((0, 3))
    rng = np.random.default_rng([seed, 606])
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    p = mesh.vertices[mesh.triangles[tri]]
    return p[:, 0] + u[:, None] * (p[:, 1] - p[:, 0]) + v[:, None] * (p[:, 2] - p[:, 0])


def seg_metrics(pred_labels, gt_labels) -> SegReport:
    """SA / DA in percent of correctly labeled static / dynamic points; AA = sqrt(SA * DA)."""
    pred = np.asarray(pred_labels).ravel()
    gt = np.asarray(gt_labels).ravel()
    if pred.shape != gt.shape:
        raise ValueError("label vectors differ in length")
    n_static = int((gt == STATIC).sum())
    n_dynamic = int((gt == DYNAMIC).sum())
    kept = int(((gt == STATIC) & (pred == STATIC)).sum())
    removed = int(((gt == DYNAMIC) & (pred == DYNAMIC)).sum())
    sa = 100.0 * kept / n_static if n_static else None
    da = 100.0 * removed / n_dynamic if n_dynamic else None
    aa = math.sqrt(sa * da) if sa is not None and da is not None else None
    counts = {"static_total": n_static, "static_kept": kept, "dynamic_total": n_dynamic, "dynamic_removed": removed}
    return SegReport(sa, da, aa, counts)


def aa_from(sa: float, da: float) -> float:
    return math.sqrt(sa * da)
