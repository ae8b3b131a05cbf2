"""Small deterministic numerics core.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Every public
function validates shapes and rejects non-finite values so that errors surface
where they originate instead of several layers downstream.

Random numbers come from :class:`Rng`, a thin wrapper over numpy's PCG64
bit generator (a permuted 128-bit linear congruential generator). PCG64 output
is defined bit-for-bit by its algorithm, so a given seed yields the same stream
on every platform. Normal draws use numpy's ziggurat sampler on top of it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

BCE_CLAMP = 1e-7


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(ValueError):
    """Raised when an input or an evaluated function value is NaN or infinite."""


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite 2-D float64 array (1-D input becomes one row)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str = "value") -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or infinite entries")


class Rng:
    """Seeded random source.

    Identical seed plus identical call sequence gives an identical value
    sequence. :meth:`child` derives independent, reproducible sub-streams keyed
    by integers, which lets parallel work be partitioned deterministically.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key: tuple[int, ...] = ()
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *key: int) -> "Rng":
        seq = np.random.SeedSequence(self.seed, spawn_key=self._key + tuple(int(k) for k in key))
        sub = Rng.__new__(Rng)
        sub.seed = self.seed
        sub._key = self._key + tuple(int(k) for k in key)
        sub._gen = np.random.Generator(np.random.PCG64(seq))
        return sub

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return sample_normal(self, shape, mean, std)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def state(self) -> dict:
        return self._gen.bit_generator.state


def sample_normal(rng: Rng, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """I.i.d. Gaussian draws of the given shape."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    draws = rng._gen.standard_normal(size=shape)
    return mean + std * draws


def affine(x, w, b) -> np.ndarray:
    """Compute ``x @ w + b`` with ``b`` broadcast across rows."""
    x = as_matrix(x, "x")
    w = as_matrix(w, "w")
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: x has shape {x.shape} but w has shape {w.shape}")
    if b.shape[0] != w.shape[1]:
        raise ShapeError(f"affine: bias has length {b.shape[0]} but w has shape {w.shape}")
    check_finite(b, "b")
    return x @ w + b


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def leaky_relu(x, slope: float = 0.01) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, slope * x)


def activation(kind: str, x, slope: float = 0.01) -> np.ndarray:
    """Apply ``sigmoid``, ``tanh`` or ``leaky_relu`` elementwise."""
    x = np.asarray(x, dtype=np.float64)
    check_finite(x, "activation input")
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "leaky_relu":
        if not 0 < slope < 1:
            raise ValueError(f"leaky_relu slope must be in (0, 1), got {slope}")
        return leaky_relu(x, slope)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind: str, x, slope: float = 0.01) -> np.ndarray:
    """Derivative of :func:`activation` with respect to its input, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "tanh":
        return 1.0 - np.tanh(x) ** 2
    if kind == "leaky_relu":
        return np.where(x > 0, 1.0, slope)
    raise ValueError(f"unknown activation {kind!r}")


def bce_loss(p, y) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to ``p``.

    ``p`` is clamped to ``[BCE_CLAMP, 1 - BCE_CLAMP]`` before the logarithm.
    The returned gradient is that of the clamped expression (zero where the
    clamp is active).
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ShapeError(f"bce_loss: p has length {p.shape[0]} but y has length {y.shape[0]}")
    if p.size == 0:
        raise ShapeError("bce_loss: empty batch")
    check_finite(p, "p")
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    grad = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n
    inside = (p >= BCE_CLAMP) & (p <= 1.0 - BCE_CLAMP)
    return float(loss), np.where(inside, grad, 0.0)


def bce_logit_grad(logits, y) -> np.ndarray:
    """Gradient of the per-sample BCE with respect to the pre-sigmoid logit.

    Equals ``sigmoid(logit) - y``; used by the networks to avoid the clamp
    discontinuity in the chain rule.
    """
    return sigmoid(logits) - np.asarray(y, dtype=np.float64)


@dataclass
class AdamState:
    """Optimizer state for a list of parameter arrays."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stabilizer: float = 1e-8
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **kw,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """Apply one bias-corrected Adam update in place and return ``params``.

    The moment buffers in ``state`` are updated and ``step_count`` is
    incremented by one.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} parameter arrays but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError("adam_step: optimizer state tracks a different number of parameters")
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam_step: param {p.shape}, grad {g.shape}, state {m.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr_t * m_hat / (np.sqrt(v_hat) + state.eps_stabilizer)
    return list(params)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"finite_diff_grad: non-finite evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b) -> float:
    """Max relative error with a unit floor on the scale, for gradient checks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)
