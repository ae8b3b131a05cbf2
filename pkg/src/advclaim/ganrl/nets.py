"""Fully connected networks with explicit forward caches and backward passes."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..numkit import AdamState, Rng, activation, activation_grad, adam_step, as_matrix

GENERATOR_WIDTHS = (128, 256, 512, 64)
LEAKY_SLOPE = 0.01


class Mlp:
    """Affine layers with leaky-ReLU hidden units and a sigmoid output layer.

    ``forward`` returns the sigmoid output together with a cache; ``backward``
    takes the gradient with respect to the output *logits* and returns
    parameter gradients and the input gradient.
    """

    def __init__(self, widths: Sequence[int], seed: int = 0, lr: float = 1e-3, slope: float = LEAKY_SLOPE):
        self.widths = list(widths)
        self.slope = slope
        rng = Rng(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.params.append(rng.uniform((fan_in, fan_out), -bound, bound))
            self.params.append(np.zeros(fan_out))
        self.opt = AdamState.for_params(self.params, learning_rate=lr)

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def logits(self, x, params=None):
        params = self.params if params is None else params
        a = x
        pre = []
        acts = [a]
        for k in range(self.n_layers):
            z = a @ params[2 * k] + params[2 * k + 1]
            pre.append(z)
            if k < self.n_layers - 1:
                a = activation("leaky_relu", z, self.slope)
                acts.append(a)
        return z, (acts, pre)

    def forward(self, x, params=None):
        x = as_matrix(x, "network input")
        z, cache = self.logits(x, params)
        return activation("sigmoid", z), cache

    def __call__(self, x, params=None) -> np.ndarray:
        return self.forward(x, params)[0]

    def backward(self, cache, d_logits) -> tuple[list[np.ndarray], np.ndarray]:
        acts, pre = cache
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        d = d_logits
        for k in reversed(range(self.n_layers)):
            grads[2 * k] = acts[k].T @ d
            grads[2 * k + 1] = d.sum(axis=0)
            d = d @ self.params[2 * k].T
            if k > 0:
                d = d * activation_grad("leaky_relu", pre[k - 1], self.slope)
        return grads, d

    def step(self, grads) -> None:
        adam_step(self.params, grads, self.opt)

    # flat views for perturbation-based estimators and persistence
    def flat(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params])

    def unflatten(self, vec: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for p in self.params:
            out.append(vec[pos:pos + p.size].reshape(p.shape))
            pos += p.size
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def to_dict(self) -> dict:
        return {"widths": self.widths, "slope": self.slope, "params": [p.tolist() for p in self.params],
                "adam_step": self.opt.step_count, "lr": self.opt.learning_rate}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        net = cls(d["widths"], lr=d.get("lr", 1e-3), slope=d.get("slope", LEAKY_SLOPE))
        net.params = [np.asarray(p, dtype=np.float64) for p in d["params"]]
        net.opt = AdamState.for_params(net.params, learning_rate=d.get("lr", 1e-3))
        return net


class GeneratorNet(Mlp):
    """Latent vector to record: five affine layers (128, 256, 512, 64, out_dim)."""

    def __init__(self, latent_dim: int, out_dim: int, seed: int = 0, lr: float = 1e-3,
                 widths: Sequence[int] = GENERATOR_WIDTHS):
        super().__init__([latent_dim, *widths, out_dim], seed=seed, lr=lr)
        self.latent_dim = latent_dim

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorNet":
        w = d["widths"]
        net = cls(w[0], w[-1], lr=d.get("lr", 1e-3), widths=w[1:-1])
        net.params = [np.asarray(p, dtype=np.float64) for p in d["params"]]
        net.opt = AdamState.for_params(net.params, learning_rate=d.get("lr", 1e-3))
        return net


class DiscriminatorNet(Mlp):
    """Record to realness probability: the generator stack mirrored, one sigmoid unit."""

    def __init__(self, in_dim: int, seed: int = 0, lr: float = 1e-3, widths: Sequence[int] = GENERATOR_WIDTHS):
        super().__init__([in_dim, *reversed(widths), 1], seed=seed, lr=lr)
