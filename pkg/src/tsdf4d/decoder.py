"""Shared MLP decoder: feature vector -> K basis weights.

ReLU hidden layers, linear output (weights are signed distances in meters).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Tape:
    inputs: list[np.ndarray]   # input to each layer
    pre: list[np.ndarray]      # pre-activation of each hidden layer


class MlpParams:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(weights) != len(biases):
            raise ValueError("weights and biases differ in length")
        for a, b in zip(weights[:-1], weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("inconsistent layer shapes")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.zero_grad()
        self.adam_m = [np.zeros_like(p) for p in self.parameters()]
        self.adam_v = [np.zeros_like(p) for p in self.parameters()]

    @classmethod
    def init(cls, in_dim: int, hidden: int, layers: int, out_dim: int, seed: int) -> "MlpParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng([seed, 202])
        dims = [in_dim] + [hidden] * layers + [out_dim]
        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def gradients(self) -> list[np.ndarray]:
        return [g for pair in zip(self.grad_w, self.grad_b) for g in pair]

    def zero_grad(self) -> None:
        self.grad_w = [np.zeros_like(w) for w in self.weights]
        self.grad_b = [np.zeros_like(b) for b in self.biases]

    def forward(self, f: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.atleast_2d(np.asarray(f, dtype=np.float64))
        tape = Tape([], [])
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            tape.inputs.append(x)
            z = x @ w + b
            if i < last:
                tape.pre.append(z)
                x = np.maximum(z, 0.0)
            else:
                x = z
        return (x[0] if np.ndim(f) == 1 else x), tape

    def backward(self, tape: Tape, upstream: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads in place and return d(loss)/d(input)."""
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        single = np.ndim(upstream) == 1
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (tape.pre[i] > 0)
            self.grad_w[i] += tape.inputs[i].T @ g
            self.grad_b[i] += g.sum(axis=0)
            g = g @ self.weights[i].T
        return g[0] if single else g


def mlp_forward(params: MlpParams, f: np.ndarray) -> tuple[np.ndarray, Tape]:
    return params.forward(f)


def mlp_backward(params: MlpParams, tape: Tape, upstream: np.ndarray) -> np.ndarray:
    return params.backward(tape, upstream)
