"""Losses, optimizer and training loop for the 4D field.

The objective per batch is

    mean_surf(l_surf) + lambda_e * mean_surf(l_eik)
        + lambda_f * mean_free(l_free) + lambda_c * mean_certain(l_certain)

Certain-free samples are a subset of the free-space samples, so they enter
both the free term (through F) and the certain term (through w^1).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core_io import MapConfig, ScanSequence, atomic_write
from .field import FieldModel, probe_points
from .grid import allocate
from .sampling import CERTAIN, FREE, SURFACE, SampleSet, SamplePool, build_pool

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.99
ADAM_EPS = 1e-15

LOSS_COLUMNS = ("step", "l_surf", "l_eik", "l_free", "l_certain", "total", "eps")


# --------------------------------------------------------------------------
# loss terms: value and derivative with respect to the prediction
# --------------------------------------------------------------------------


def l_surf(d_hat, d_surf):
    """Near-surface loss: penalize a wrong sign or overshooting |d_surf|."""
    d_hat = np.asarray(d_hat, dtype=np.float64)
    d_surf = np.asarray(d_surf, dtype=np.float64)
    prod = d_hat * d_surf
    out = np.where(
        d_surf == 0, np.abs(d_hat),
        np.where(prod < 0, np.abs(d_hat),
                 np.where(prod > d_surf**2, np.abs(d_hat - d_surf), 0.0)))
    return out if out.ndim else float(out)


def l_surf_interval(d_hat, d_surf):
    """Same loss written as the L1 distance from d_hat to [min(0, d_surf), max(0, d_surf)]."""
    d_hat = np.asarray(d_hat, dtype=np.float64)
    lo = np.minimum(0.0, d_surf)
    hi = np.maximum(0.0, d_surf)
    out = np.maximum(lo - d_hat, 0.0) + np.maximum(d_hat - hi, 0.0)
    return out if out.ndim else float(out)


def l_surf_grad(d_hat, d_surf):
    d_hat = np.asarray(d_hat, dtype=np.float64)
    lo = np.minimum(0.0, d_surf)
    hi = np.maximum(0.0, d_surf)
    return np.where(d_hat < lo, -1.0, np.where(d_hat > hi, 1.0, 0.0))


def l_eikonal(grad):
    """(||grad|| - 1)^2 for a (3,) or (n, 3) gradient."""
    g = np.asarray(grad, dtype=np.float64)
    out = (np.linalg.norm(g, axis=-1) - 1.0) ** 2
    return out if out.ndim else float(out)


def l_eikonal_grad(grad):
    g = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, 2.0 * (norm - 1.0) * g / safe, 0.0)


def l_free(d_hat, tau: float):
    out = np.abs(np.asarray(d_hat, dtype=np.float64) - tau)
    return out if out.ndim else float(out)


def l_certain(w1, tau: float):
    out = np.abs(np.asarray(w1, dtype=np.float64) - tau)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# perturbation schedule
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsSchedule:
    eps_start: float
    eps_end: float
    total_steps: int
    decay_fraction: float = 0.7

    def __post_init__(self):
        if not self.eps_start >= self.eps_end > 0:
            raise ValueError("need eps_start >= eps_end > 0")

    @classmethod
    def from_config(cls, cfg: MapConfig) -> "EpsSchedule":
        return cls(cfg.eps_start, cfg.eps_end, cfg.train_steps, cfg.eps_decay_fraction)


def eps_at(schedule: EpsSchedule, step: int) -> float:
    """Exponential decay from eps_start to eps_end over the first decay_fraction of training."""
    span = schedule.decay_fraction * schedule.total_steps
    frac = 1.0 if span <= 0 else min(step / span, 1.0)
    return schedule.eps_start * (schedule.eps_end / schedule.eps_start) ** frac


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


def _adam_update(param, grad, m, v, lr: float, step: int) -> None:
    m *= ADAM_BETA1
    m += (1 - ADAM_BETA1) * grad
    v *= ADAM_BETA2
    v += (1 - ADAM_BETA2) * grad * grad
    m_hat = m / (1 - ADAM_BETA1**step)
    v_hat = v / (1 - ADAM_BETA2**step)
    param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


class Adam:
    """Adam over grid features, decoder parameters and basis values.

    The first basis column is excluded from every update.
    """

    def __init__(self, model: FieldModel, lr: float):
        self.model = model
        self.lr = lr
        self.step_count = 0
        self.basis_m = np.zeros_like(model.basis.values[:, 1:])
        self.basis_v = np.zeros_like(model.basis.values[:, 1:])

    def step(self) -> None:
        self.step_count += 1
        m, k = self.model, self.step_count
        for lv in m.grid.levels:
            _adam_update(lv.features, lv.grad, lv.adam_m, lv.adam_v, self.lr, k)
        for p, g, mm, vv in zip(m.mlp.parameters(), m.mlp.gradients(), m.mlp.adam_m, m.mlp.adam_v):
            _adam_update(p, g, mm, vv, self.lr, k)
        dyn = m.basis.values[:, 1:]
        _adam_update(dyn, m.basis.grad[:, 1:].copy(), self.basis_m, self.basis_v, self.lr, k)
        m.basis.values[:, 1:] = dyn


# --------------------------------------------------------------------------
# one step
# --------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    l_surf: float
    l_eik: float
    l_free: float
    l_certain: float
    total: float
    counts: dict = field(default_factory=dict)


def _mean(x: np.ndarray) -> float:
    return float(x.mean()) if len(x) else 0.0


def batch_loss(model: FieldModel, batch: SampleSet, cfg: MapConfig, eps: float,
               backward: bool = True) -> LossBreakdown:
    """Evaluate the batch objective; with ``backward`` accumulate parameter gradients.

    Surface samples issue six extra probe queries for the numerical gradient.
    Gradients are added to whatever the model already holds.
    """
    tau = cfg.truncation
    surf = batch.region == SURFACE
    free_space = (batch.region == FREE) | (batch.region == CERTAIN)
    certain = batch.region == CERTAIN
    n_s, n_f, n_c = int(surf.sum()), int(free_space.sum()), int(certain.sum())

    q_s, t_s = batch.q[surf], batch.t[surf]
    probes = probe_points(q_s, eps).reshape(-1, 3)
    points = np.concatenate([batch.q, probes])
    times = np.concatenate([batch.t, np.tile(t_s, 6)])
    values, cache = model.forward(points, times)
    d_hat = values[: len(batch)]
    pv = values[len(batch):].reshape(6, n_s)
    grad = np.stack([pv[0] - pv[1], pv[2] - pv[3], pv[4] - pv[5]], axis=1) / (2 * eps)
    w1 = cache.weights[: len(batch), 0]

    ls = l_surf(d_hat[surf], batch.d_surf[surf])
    le = l_eikonal(grad) if n_s else np.zeros(0)
    lf = l_free(d_hat[free_space], tau)
    lc = l_certain(w1[certain], tau)
    parts = (_mean(ls), _mean(le), _mean(lf), _mean(lc))
    total = parts[0] + cfg.lambda_e * parts[1] + cfg.lambda_f * parts[2] + cfg.lambda_c * parts[3]

    if backward:
        d_val = np.zeros(len(values))
        d_w1 = np.zeros(len(values))
        if n_s:
            d_val[: len(batch)][surf] = l_surf_grad(d_hat[surf], batch.d_surf[surf]) / n_s
            dg = cfg.lambda_e * l_eikonal_grad(grad) / (n_s * 2 * eps)
            probe_up = np.stack([dg[:, 0], -dg[:, 0], dg[:, 1], -dg[:, 1], dg[:, 2], -dg[:, 2]])
            d_val[len(batch):] = probe_up.reshape(-1)
        if n_f:
            d_val[: len(batch)][free_space] += cfg.lambda_f * np.sign(d_hat[free_space] - tau) / n_f
        if n_c:
            d_w1[: len(batch)][certain] = cfg.lambda_c * np.sign(w1[certain] - tau) / n_c
        model.backward(cache, d_val, d_w1)

    return LossBreakdown(*parts, total=total, counts={"surface": n_s, "free": n_f, "certain_free": n_c})


def train_step(model: FieldModel, optimizer: Adam, batch: SampleSet, cfg: MapConfig, eps: float) -> LossBreakdown:
    model.zero_grad()
    out = batch_loss(model, batch, cfg, eps)
    optimizer.step()
    return out


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: FieldModel
    pool: SamplePool
    losses: list[tuple]

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for row in self.losses:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def batches(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Index batches over a pool of size n, reshuffled every epoch."""
    batch_size = min(batch_size, n)
    perm, pos = rng.permutation(n), 0
    for _ in range(steps):
        if pos + batch_size > n:
            perm, pos = rng.permutation(n), 0
        yield perm[pos:pos + batch_size]
        pos += batch_size


def init_model(seq: ScanSequence, pool: SamplePool, cfg: MapConfig) -> FieldModel:
    voxel_sizes = [cfg.voxel_size(level) for level in range(cfg.levels)]
    grid = allocate(seq.all_points(), pool.all().q, voxel_sizes, cfg.feature_dim, cfg.seed)
    return FieldModel.create(grid, seq.frame_count, cfg)


def train(seq: ScanSequence, cfg: MapConfig, log_every: int = 500, callback=None) -> TrainResult:
    """Sample, allocate and optimize for ``cfg.train_steps`` steps."""
    pool = build_pool(seq, cfg)
    log.info("pool: %s (skipped rays: %d)", pool.counts(), pool.skipped_rays)
    model = init_model(seq, pool, cfg)
    log.info("grid: %d vertices over %d levels", model.grid.vertex_count(), cfg.levels)
    data = pool.all()
    opt = Adam(model, cfg.learning_rate)
    sched = EpsSchedule.from_config(cfg)
    rng = np.random.default_rng([cfg.seed, 404])
    losses = []
    for step, idx in enumerate(batches(len(data), cfg.batch_size, cfg.train_steps, rng)):
        eps = eps_at(sched, step)
        out = train_step(model, opt, data.select(np.sort(idx)), cfg, eps)
        losses.append((step, out.l_surf, out.l_eik, out.l_free, out.l_certain, out.total, eps))
        if log_every and (step % log_every == 0 or step == cfg.train_steps - 1):
            log.info("step %d total %.5f surf %.5f eik %.5f free %.5f certain %.5f eps %.4f",
                     step, out.total, out.l_surf, out.l_eik, out.l_free, out.l_certain, eps)
        if callback is not None:
            callback(step, model, out)
    if not math.isfinite(losses[-1][5] if losses else 0.0):
        raise FloatingPointError("training diverged")
    return TrainResult(model, pool, losses)


def write_loss_log(result: TrainResult, path) -> None:
    with atomic_write(path, "w") as fh:
        fh.write(result.loss_csv())
