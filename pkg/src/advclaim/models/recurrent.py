"""Bidirectional LSTM detector with hand-written backpropagation.

A tabular record is fed as a length-1 sequence. Both directions consume it and
their final hidden states are concatenated into the sigmoid head, so the head
is ``2 * hidden_size`` wide (440 for the default of 220 units per direction).
Inputs of shape ``(n, T, F)`` are also accepted for genuine sequences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numkit import AdamState, Rng, adam_step, sigmoid
from .base import Classifier, check_binary_train


def _as_seq(x: np.ndarray) -> np.ndarray:
    return x[:, None, :] if x.ndim == 2 else x


@dataclass
class _DirCache:
    concat: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    c_prev: list = field(default_factory=list)
    c: list = field(default_factory=list)


def _direction_forward(w, b, seq, hidden):
    """Run one LSTM direction over ``seq`` (n, T, F) in the given order."""
    n = seq.shape[0]
    h = np.zeros((n, hidden))
    c = np.zeros((n, hidden))
    cache = _DirCache()
    H = hidden
    for t in range(seq.shape[1]):
        cat = np.concatenate([h, seq[:, t, :]], axis=1)
        z = cat @ w.T + b
        f = sigmoid(z[:, :H])
        i = sigmoid(z[:, H:2 * H])
        o = sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        cache.concat.append(cat)
        cache.c_prev.append(c)
        c = f * c + i * g
        h = o * np.tanh(c)
        cache.gates.append((f, i, o, g))
        cache.c.append(c)
    return h, cache


def _direction_backward(w, dh, cache, hidden, n_in):
    """Backpropagate ``dh`` (gradient w.r.t. the final hidden state)."""
    H = hidden
    dw = np.zeros_like(w)
    db = np.zeros(w.shape[0])
    dc = np.zeros_like(dh)
    steps = len(cache.concat)
    dxs = [None] * steps
    for t in reversed(range(steps)):
        f, i, o, g = cache.gates[t]
        tc = np.tanh(cache.c[t])
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc**2)
        df = dc * cache.c_prev[t]
        di = dc * g
        dg = dc * i
        dz = np.concatenate(
            [df * f * (1 - f), di * i * (1 - i), do * o * (1 - o), dg * (1 - g**2)], axis=1
        )
        dw += dz.T @ cache.concat[t]
        db += dz.sum(axis=0)
        dcat = dz @ w
        dh = dcat[:, :H]
        dxs[t] = dcat[:, H:H + n_in]
        dc = dc * f
    return dw, db, np.stack(dxs, axis=1)


class BiRecurrentModel(Classifier):
    family = "birecurrent"
    differentiable = True

    def __init__(self, n_features: int, hidden_size: int = 220, dropout_rate: float = 0.5, seed: int = 0):
        self.n_features = n_features
        self.hidden_size = hidden_size
        self.dropout_rate = dropout_rate
        self.seed = seed
        rng = Rng(seed)
        H, F = hidden_size, n_features
        bound = 1.0 / np.sqrt(H)
        self.params: dict[str, np.ndarray] = {}
        for d in ("fwd", "bwd"):
            # rows stacked as forget, input, output, candidate gate blocks
            self.params[f"{d}_W"] = rng.uniform((4 * H, H + F), -bound, bound)
            self.params[f"{d}_b"] = rng.uniform((4 * H,), -bound, bound)
        hb = 1.0 / np.sqrt(2 * H)
        self.params["head_w"] = rng.uniform((2 * H,), -hb, hb)
        self.params["head_b"] = rng.uniform((1,), -hb, hb)
        self.training_log: list[float] = []
        self.epochs = 0
        self.lr = 1e-3
        self.batch_size = 32

    # forward / backward -------------------------------------------------
    def _forward(self, x, mask=None):
        seq = _as_seq(x)
        p = self.params
        H = self.hidden_size
        h_f, cache_f = _direction_forward(p["fwd_W"], p["fwd_b"], seq, H)
        h_b, cache_b = _direction_forward(p["bwd_W"], p["bwd_b"], seq[:, ::-1, :], H)
        hcat = np.concatenate([h_f, h_b], axis=1)
        hin = hcat * mask if mask is not None else hcat
        logit = hin @ p["head_w"] + p["head_b"][0]
        return logit, (seq, hin, cache_f, cache_b)

    def _backward(self, dlogit, state, mask=None):
        seq, hin, cache_f, cache_b = state
        p = self.params
        H, F = self.hidden_size, seq.shape[2]
        grads = {"head_w": hin.T @ dlogit, "head_b": np.array([dlogit.sum()])}
        dhcat = np.outer(dlogit, p["head_w"])
        if mask is not None:
            dhcat = dhcat * mask
        dwf, dbf, dxf = _direction_backward(p["fwd_W"], dhcat[:, :H], cache_f, H, F)
        dwb, dbb, dxb = _direction_backward(p["bwd_W"], dhcat[:, H:], cache_b, H, F)
        grads.update(fwd_W=dwf, fwd_b=dbf, bwd_W=dwb, bwd_b=dbb)
        return grads, dxf + dxb[:, ::-1, :]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = self._check(x)
        return self._forward(x)[0]

    def _proba(self, x):
        return sigmoid(self._forward(x)[0])

    def loss_and_grads(self, x, y, mask=None):
        """Mean BCE over the batch and gradients for every parameter (logit form)."""
        y = np.asarray(y, dtype=np.float64)
        logit, state = self._forward(x, mask)
        loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
        dlogit = (sigmoid(logit) - y) / y.size
        grads, _ = self._backward(dlogit, state, mask)
        return loss, grads

    def input_gradient(self, x, y) -> np.ndarray:
        """Gradient of each row's own BCE loss with respect to that row."""
        x = self._check(x)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        logit, state = self._forward(x)
        _, dx = self._backward(sigmoid(logit) - y, state)
        return dx[:, 0, :]

    # persistence --------------------------------------------------------
    def hyperparameters(self) -> dict:
        return {"hidden_size": self.hidden_size, "dropout_rate": self.dropout_rate,
                "n_features": self.n_features, "seed": self.seed, "epochs": self.epochs,
                "lr": self.lr, "batch_size": self.batch_size}

    def parameters_dict(self) -> dict:
        return {k: v.tolist() for k, v in sorted(self.params.items())}

    @classmethod
    def from_parts(cls, hyper: dict, params: dict) -> "BiRecurrentModel":
        m = cls(hyper["n_features"], hyper["hidden_size"], hyper["dropout_rate"], hyper.get("seed", 0))
        m.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        m.epochs = hyper.get("epochs", 0)
        m.lr = hyper.get("lr", 1e-3)
        m.batch_size = hyper.get("batch_size", 32)
        return m


def train_birecurrent(x, y, epochs: int = 10, lr: float = 1e-3, seed: int = 0, hidden_size: int = 220,
                      dropout_rate: float = 0.5, batch_size: int = 32) -> BiRecurrentModel:
    """BCE + Adam training with inverted dropout on the concatenated hidden state."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_binary_train(y)
    model = BiRecurrentModel(x.shape[-1], hidden_size, dropout_rate, seed)
    model.epochs, model.lr, model.batch_size = epochs, lr, batch_size
    names = sorted(model.params)
    state = AdamState.for_params([model.params[k] for k in names], learning_rate=lr)
    rng = Rng(seed).child(1)
    keep = 1.0 - dropout_rate
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        total = 0.0
        for start in range(0, x.shape[0], batch_size):
            idx = order[start:start + batch_size]
            mask = None
            if dropout_rate > 0:
                mask = (rng.uniform((idx.size, 2 * hidden_size)) < keep) / keep
            loss, grads = model.loss_and_grads(x[idx], y[idx], mask)
            adam_step([model.params[k] for k in names], [grads[k] for k in names], state)
            total += loss * idx.size
        model.training_log.append(total / x.shape[0])
    return model
