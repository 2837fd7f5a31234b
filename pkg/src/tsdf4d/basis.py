"""Shared temporal basis functions stored as a frames x K table."""

from __future__ import annotations

import warnings

import numpy as np


class BasisTable:
    """Values ``phi[t, k]`` for frame ``t`` and basis ``k``; column 0 is pinned to 1.

    Column 0 is the static component.  It never receives gradient and the
    optimizer never touches it.
    """

    def __init__(self, values: np.ndarray):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 2:
            raise ValueError("basis table must be N x K with K >= 2")
        if not np.all(values[:, 0] == 1.0):
            raise ValueError("first basis column must be identically 1")
        self.values = values
        self.grad = np.zeros_like(values)

    @property
    def frame_count(self) -> int:
        return self.values.shape[0]

    @property
    def basis_count(self) -> int:
        return self.values.shape[1]

    def eval_row(self, t: int) -> np.ndarray:
        if not 0 <= t < self.frame_count:
            raise IndexError(f"frame {t} outside 0..{self.frame_count - 1}")
        return self.values[t]

    def rows(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t)
        if t.size and (t.min() < 0 or t.max() >= self.frame_count):
            raise IndexError(f"frame outside 0..{self.frame_count - 1}")
        return self.values[t]

    def accumulate_grad(self, t: int, weights: np.ndarray, upstream: float) -> None:
        """dF/dphi[t, k] = w^k, so add ``upstream * w^k`` for every k but the first."""
        self.grad[t, 1:] += upstream * np.asarray(weights, dtype=np.float64)[1:]

    def accumulate_grad_batch(self, t: np.ndarray, weights: np.ndarray, upstream: np.ndarray) -> None:
        contrib = upstream[:, None] * weights[:, 1:]
        # ordered per-frame reduction keeps results independent of thread count
        order = np.argsort(t, kind="stable")
        ts, contrib = t[order], contrib[order]
        starts = np.flatnonzero(np.r_[True, ts[1:] != ts[:-1]])
        if len(ts):
            self.grad[ts[starts], 1:] += np.add.reduceat(contrib, starts, axis=0)

    def zero_grad(self) -> None:
        self.grad[:] = 0.0


def init_dct(frame_count: int, basis_count: int) -> BasisTable:
    """phi_k(t) = cos(pi / (2N) * (2t + 1) * k) for 0-based t and k."""
    if frame_count < 1 or basis_count < 2:
        raise ValueError("need frame_count >= 1 and basis_count >= 2")
    if basis_count > frame_count:
        warnings.warn(f"{basis_count} basis functions for {frame_count} frames is over-complete", stacklevel=2)
    t = np.arange(frame_count, dtype=np.float64)[:, None]
    k = np.arange(basis_count, dtype=np.float64)[None, :]
    values = np.cos(np.pi / (2 * frame_count) * (2 * t + 1) * k)
    values[:, 0] = 1.0
    return BasisTable(values)
