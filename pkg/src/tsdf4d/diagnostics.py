"""Probe-based quality checks for a trained map against a synthetic scene.

Probes are drawn from the observed ground-truth wall cloud and pushed off
the wall along its normal by a uniform offset in [-band, band].  The same
probes serve the Eikonal, flatness and static-accuracy checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import FieldModel, numerical_gradient
from .synth import SceneSpec, room_sdf

NORMAL_STEP = 1e-4


def wall_normals(spec: SceneSpec, points: np.ndarray) -> np.ndarray:
    """Unit gradient of the room SDF by central differences."""
    g = np.stack([(room_sdf(spec, points + NORMAL_STEP * e) - room_sdf(spec, points - NORMAL_STEP * e))
                  / (2 * NORMAL_STEP) for e in np.eye(3)], axis=1)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def near_surface_probes(spec: SceneSpec, wall_cloud: np.ndarray, count: int, band: float,
                        seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 909])
    idx = rng.choice(len(wall_cloud), size=count, replace=len(wall_cloud) < count)
    base = wall_cloud[idx]
    return base + wall_normals(spec, base) * rng.uniform(-band, band, (count, 1))


def gradient_norms(model: FieldModel, probes: np.ndarray, frames: np.ndarray, eps: float) -> np.ndarray:
    # group by frame so each numerical_gradient call is one batched query
    out = np.empty(len(probes))
    for t in np.unique(frames):
        sel = frames == t
        out[sel] = np.linalg.norm(numerical_gradient(model, probes[sel], int(t), eps), axis=1)
    return out


def temporal_deviation(model: FieldModel, probes: np.ndarray) -> np.ndarray:
    """Per probe, max over frames of |F(p, t) - w1(p)|."""
    w1 = model.query_static(probes)
    dev = np.zeros(len(probes))
    for t in range(model.frame_count):
        dev = np.maximum(dev, np.abs(model.query(probes, t) - w1))
    return dev


@dataclass
class ProbeReport:
    eikonal_fraction: float      # share of probes with | |grad F| - 1 | <= tol
    grad_norm_percentiles: tuple  # 5 / 50 / 95
    max_temporal_deviation: float
    static_sdf_error: float      # mean |w1 - oracle|

    def lines(self) -> list[str]:
        p5, p50, p95 = self.grad_norm_percentiles
        return [f"eikonal within tolerance: {100 * self.eikonal_fraction:.1f} % "
                f"(|grad| p5 {p5:.3f}, p50 {p50:.3f}, p95 {p95:.3f})",
                f"max |F(p,t) - w1(p)|: {self.max_temporal_deviation:.4f} m",
                f"mean |w1 - oracle|: {self.static_sdf_error:.4f} m"]


def probe_report(model: FieldModel, spec: SceneSpec, wall_cloud: np.ndarray, count: int = 1000,
                 band: float | None = None, eps: float | None = None, tol: float = 0.2,
                 seed: int = 0) -> ProbeReport:
    cfg = model.cfg
    band = 0.25 * cfg.truncation if band is None else band
    eps = cfg.eps_end if eps is None else eps
    probes = near_surface_probes(spec, wall_cloud, count, band, seed)
    frames = np.random.default_rng([seed, 910]).integers(0, model.frame_count, count)
    gn = gradient_norms(model, probes, frames, eps)
    err = np.abs(model.query_static(probes) - room_sdf(spec, probes))
    return ProbeReport(float(np.mean(np.abs(gn - 1) <= tol)), tuple(np.percentile(gn, [5, 50, 95])),
                       float(temporal_deviation(model, probes).max()), float(err.mean()))
