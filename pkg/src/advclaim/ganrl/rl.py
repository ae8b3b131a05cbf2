"""Surrogate-guided reinforcement refinement of a pretrained generator.

Per episode the generator's latent batch takes ``horizon`` steps. At each step
the batch is decoded, scored by the surrogate, thresholded at 0.5, and
rewarded with the fraction of rows labelled ``target_label``. The TD error is
the step reward minus the running mean of the episode's rewards so far, and
the latent moves by ``alpha * td_error * gamma**t * N(0, I)``.

After the last step the generator is trained on ``BCE(S(G(z_final)), target)``
with Adam, through the surrogate's input gradient when one is available and
through an antithetic Gaussian parameter-perturbation estimate otherwise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..numkit import AdamState, Rng, bce_loss, sigmoid
from .nets import GeneratorNet
from .surrogate import ProtocolError, QueryBudgetExceeded, SurrogateHandle


@dataclass
class RlConfig:
    batch: int = 32
    horizon: int = 16
    latent_dim: int = 64
    alpha: float = 0.1
    gamma: float = 0.95
    episodes: int = 300
    target_label: int = 0
    generator_lr: float = 1e-3
    seed: int = 0
    es_samples: int = 16
    es_sigma: float = 0.02
    anchor: bool = False
    record_latents: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch * self.horizon * self.latent_dim <= 0:
            raise ValueError("latent shape must be non-empty")
        if self.target_label not in (0, 1):
            raise ValueError("target_label must be 0 or 1")
        if self.es_samples < 2 or self.es_samples % 2:
            raise ValueError("es_samples must be an even number >= 2 (antithetic pairs)")


@dataclass
class EpisodeTrace:
    episode: int
    rewards: list[float] = field(default_factory=list)
    td_errors: list[float] = field(default_factory=list)
    mean_scores: list[float] = field(default_factory=list)
    queries: list[int] = field(default_factory=list)
    generator_loss: float = float("nan")
    latents: list[np.ndarray] | None = None

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else 0.0

    def step_records(self) -> list[dict]:
        return [
            {"episode": self.episode, "t": t, "reward": r, "td_error": d, "mean_score": s, "queries": q}
            for t, (r, d, s, q) in enumerate(zip(self.rewards, self.td_errors, self.mean_scores, self.queries))
        ]


def step_reward(predicted, target_label: int) -> float:
    """Fraction of rows whose predicted label equals the target."""
    predicted = np.asarray(predicted)
    if predicted.size == 0:
        raise ValueError("step_reward: empty batch")
    return float(np.mean(predicted == target_label))


def td_error(rewards) -> float:
    """Latest reward minus the mean of all rewards so far (in [-1, 1])."""
    return float(rewards[-1] - np.mean(rewards))


def td_update(z, delta: float, alpha: float, gamma: float, t: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """``z + alpha * delta * gamma**t * n`` with fresh ``n ~ N(0, I)``; returns (z_next, n)."""
    if t < 0:
        raise ValueError("t must be non-negative")
    noise = rng.normal(np.shape(z))
    return z + alpha * delta * gamma**t * noise, noise


def _episode_rng(cfg: RlConfig, episode: int) -> Rng:
    return Rng(cfg.seed).child(episode)


def initial_latent(cfg: RlConfig, episode: int, gen: GeneratorNet | None = None,
                   anchors: np.ndarray | None = None) -> np.ndarray:
    rng = _episode_rng(cfg, episode).child(0)
    if anchors is None or gen is None:
        return rng.normal((cfg.batch, cfg.latent_dim))
    # nearest-record projection: pick, per sampled real record, the closest decoded latent
    pool = rng.normal((8 * cfg.batch, cfg.latent_dim))
    decoded = gen(pool)
    recs = anchors[rng.choice(anchors.shape[0], cfg.batch, replace=anchors.shape[0] < cfg.batch)]
    d = ((recs[:, None, :] - decoded[None, :, :]) ** 2).sum(axis=2)
    return pool[np.argmin(d, axis=1)]


def replay_latents(cfg: RlConfig, episode: int, td_errors, z0: np.ndarray) -> list[np.ndarray]:
    """Rebuild an episode's latent trajectory from its logged TD errors and seed."""
    rng = _episode_rng(cfg, episode).child(1)
    z = z0
    out = [z]
    for t, d in enumerate(td_errors):
        z, _ = td_update(z, d, cfg.alpha, cfg.gamma, t, rng)
        out.append(z)
    return out


def _bce_to_target(scores, target):
    return bce_loss(scores, np.full(scores.shape, float(target)))[0]


def _es_gradient(gen: GeneratorNet, z, surrogate: SurrogateHandle, cfg: RlConfig, rng: Rng) -> np.ndarray:
    """Antithetic estimate of d loss / d params from score-only queries."""
    theta = gen.flat()
    grad = np.zeros_like(theta)
    pairs = cfg.es_samples // 2
    for k in range(pairs):
        eps = rng.normal(theta.shape)
        lp = _bce_to_target(surrogate.score(gen(z, gen.unflatten(theta + cfg.es_sigma * eps))), cfg.target_label)
        lm = _bce_to_target(surrogate.score(gen(z, gen.unflatten(theta - cfg.es_sigma * eps))), cfg.target_label)
        grad += (lp - lm) * eps
    return grad / (2.0 * cfg.es_sigma * pairs)


def _analytic_gradient(gen: GeneratorNet, z, surrogate: SurrogateHandle, cfg: RlConfig) -> list[np.ndarray]:
    logit, cache = gen.logits(z)
    x = sigmoid(logit)
    dx = surrogate.gradient(x, np.full(x.shape[0], cfg.target_label)) / x.shape[0]
    grads, _ = gen.backward(cache, dx * x * (1.0 - x))
    return grads


def rl_refine(gen: GeneratorNet, surrogate: SurrogateHandle, cfg: RlConfig,
              anchors: np.ndarray | None = None) -> tuple[GeneratorNet, list[EpisodeTrace]]:
    """Refine ``gen`` in place for ``cfg.episodes`` episodes; returns it and the traces.

    ``anchors`` (real records) are used only when ``cfg.anchor`` is set.
    Exhausting the surrogate's query budget raises
    :class:`QueryBudgetExceeded` with the completed traces attached.
    """
    if gen.latent_dim != cfg.latent_dim:
        raise ValueError(f"generator latent width {gen.latent_dim} != config latent_dim {cfg.latent_dim}")
    gen.opt = AdamState.for_params(gen.params, learning_rate=cfg.generator_lr)
    traces: list[EpisodeTrace] = []
    try:
        for ep in range(cfg.episodes):
            traces.append(_run_episode(gen, surrogate, cfg, ep, anchors if cfg.anchor else None))
    except QueryBudgetExceeded as exc:
        raise QueryBudgetExceeded(str(exc), traces) from None
    return gen, traces


def _run_episode(gen, surrogate, cfg, ep, anchors) -> EpisodeTrace:
    z = initial_latent(cfg, ep, gen, anchors)
    noise_rng = _episode_rng(cfg, ep).child(1)
    trace = EpisodeTrace(ep, latents=[z] if cfg.record_latents else None)
    for t in range(cfg.horizon):
        scores = surrogate.score(gen(z))
        reward = step_reward(scores > 0.5, cfg.target_label)
        trace.rewards.append(reward)
        delta = td_error(trace.rewards)
        trace.td_errors.append(delta)
        trace.mean_scores.append(float(np.mean(scores)))
        trace.queries.append(surrogate.queries)
        z, _ = td_update(z, delta, cfg.alpha, cfg.gamma, t, noise_rng)
        if trace.latents is not None:
            trace.latents.append(z)
    final_scores = surrogate.score(gen(z))
    trace.generator_loss = _bce_to_target(final_scores, cfg.target_label)
    if trace.generator_loss <= 1e-6:
        return trace  # nothing left to learn on this batch
    if surrogate.differentiable:
        grads = _analytic_gradient(gen, z, surrogate, cfg)
    else:
        grads = gen.unflatten(_es_gradient(gen, z, surrogate, cfg, _episode_rng(cfg, ep).child(2)))
    gen.step(grads)
    return trace


@dataclass
class AttackEvaluation:
    batch_labels: list[list[int]]
    target_label: int

    @property
    def n_samples(self) -> int:
        return sum(len(b) for b in self.batch_labels)


def evaluate_generator(gen: GeneratorNet, surrogate: SurrogateHandle, n_batches: int = 100,
                       batch_size: int = 32, seed: int = 0, target_label: int = 0
                       ) -> tuple[AttackEvaluation, np.ndarray]:
    """Score ``n_batches`` fresh generated batches; returns predicted labels and the records."""
    rng = Rng(seed).child(99)
    labels, records = [], []
    for _ in range(n_batches):
        x = gen(rng.normal((batch_size, gen.latent_dim)))
        labels.append([int(v) for v in surrogate.score(x) > 0.5])
        records.append(x)
    return AttackEvaluation(labels, target_label), np.vstack(records)


def write_trace_jsonl(traces, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for tr in traces:
            for rec in tr.step_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def config_dict(cfg: RlConfig) -> dict:
    return asdict(cfg)
