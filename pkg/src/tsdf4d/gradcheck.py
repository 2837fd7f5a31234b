"""Finite-difference verification of the training gradients.

Builds a miniature model (one finest voxel, two levels) and compares the
analytic gradient of the full batch objective, Eikonal probes included,
against central differences for every grid feature, decoder parameter and
free basis entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_io import MapConfig
from .field import FieldModel
from .grid import allocate
from .sampling import CERTAIN, FREE, SURFACE, SampleSet
from .training import batch_loss

KINK_MARGIN = 1e-3


def miniature_config(**kw) -> MapConfig:
    base = dict(levels=2, feature_dim=8, basis_count=3, mlp_hidden_layers=2, mlp_hidden_width=16,
                finest_voxel_size=1.0, truncation=0.3, eps_start=0.05, eps_end=0.05, seed=0)
    base.update(kw)
    return MapConfig(**base)


def miniature_model(frames: int = 3, seed: int = 0, cfg: MapConfig | None = None) -> FieldModel:
    cfg = cfg or miniature_config(seed=seed)
    grid = allocate(np.array([[0.5, 0.5, 0.5]]), np.zeros((0, 3)),
                    [cfg.voxel_size(i) for i in range(cfg.levels)], cfg.feature_dim, seed)
    model = FieldModel.create(grid, frames, cfg)
    rng = np.random.default_rng([seed, 707])
    for lv in grid.levels:
        lv.features[:] = rng.normal(0.0, 0.5, lv.features.shape)
    for b in model.mlp.biases:
        b[:] = rng.normal(0.0, 0.1, b.shape)
    model.basis.values[:, 1:] += rng.normal(0.0, 0.1, model.basis.values[:, 1:].shape)
    return model


def miniature_batch(frames: int = 3, seed: int = 0, per_region: int = 4) -> SampleSet:
    rng = np.random.default_rng([seed, 808])
    n = 3 * per_region
    q = rng.uniform(0.2, 0.8, (n, 3))
    t = rng.integers(0, frames, n)
    region = np.repeat([SURFACE, FREE, CERTAIN], per_region).astype(np.int8)
    d = np.where(region == SURFACE, rng.uniform(-0.3, 0.3, n), rng.uniform(0.3, 3.0, n))
    return SampleSet(q, t, d, region)


def parameter_views(model: FieldModel) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(group, parameter array, matching gradient array) for every trainable tensor."""
    out = [("grid", lv.features, lv.grad) for lv in model.grid.levels]
    out += [("mlp", p, g) for p, g in zip(model.mlp.parameters(), model.mlp.gradients())]
    out.append(("basis", model.basis.values[:, 1:], model.basis.grad[:, 1:]))
    return out


def near_kink(model: FieldModel, batch: SampleSet, eps: float) -> bool:
    """True if any piecewise term sits within KINK_MARGIN of a breakpoint."""
    from .field import probe_points

    surf = batch.region == SURFACE
    pts = np.concatenate([batch.q, probe_points(batch.q[surf], eps).reshape(-1, 3)])
    f, _ = model.grid.interpolate(pts)
    _, tape = model.mlp.forward(f)
    if any(np.abs(z).min() < 1e-4 for z in tape.pre):
        return True
    d_hat = model.query(batch.q, batch.t)
    w1 = model.query_static(batch.q)
    tau = model.cfg.truncation
    ds = batch.d_surf[surf]
    if np.abs(np.concatenate([d_hat[surf], d_hat[surf] - ds, ds])).min() < KINK_MARGIN:
        return True
    free = ~surf
    if np.abs(d_hat[free] - tau).min() < KINK_MARGIN:
        return True
    return bool(np.abs(w1[batch.region == CERTAIN] - tau).min() < KINK_MARGIN)


@dataclass
class GradCheckResult:
    max_rel_error: dict
    parameters: int
    worst: tuple

    def ok(self, tol: float) -> bool:
        return all(v <= tol for v in self.max_rel_error.values())


def check_gradients(model: FieldModel, batch: SampleSet, eps: float, step: float = 1e-5,
                    floor: float = 1e-6) -> GradCheckResult:
    """Max over parameters of |analytic - fd| / max(|analytic|, |fd|, floor), per group."""
    cfg = model.cfg
    model.zero_grad()
    batch_loss(model, batch, cfg, eps, backward=True)
    errors: dict[str, float] = {}
    worst = ("", -1.0, 0.0, 0.0)
    count = 0
    for group, param, grad in parameter_views(model):
        analytic = grad.copy()
        for idx in np.ndindex(param.shape):
            old = param[idx]
            param[idx] = old + step
            lp = batch_loss(model, batch, cfg, eps, backward=False).total
            param[idx] = old - step
            lm = batch_loss(model, batch, cfg, eps, backward=False).total
            param[idx] = old
            fd = (lp - lm) / (2 * step)
            a = analytic[idx]
            rel = abs(a - fd) / max(abs(a), abs(fd), floor)
            errors[group] = max(errors.get(group, 0.0), rel)
            if rel > worst[1]:
                worst = (f"{group}{idx}", rel, a, fd)
            count += 1
    return GradCheckResult(errors, count, worst)


def find_smooth_case(frames: int = 3, seed: int = 0, eps: float = 0.05, tries: int = 50):
    """A miniature model and batch whose terms all sit away from breakpoints."""
    for s in range(seed, seed + tries):
        model = miniature_model(frames, s)
        batch = miniature_batch(frames, s)
        if not near_kink(model, batch, eps):
            return model, batch
    raise RuntimeError("no kink-free miniature configuration found")
