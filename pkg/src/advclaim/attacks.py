"""Evasion attacks on trained detectors.

FGSM, BIM and PGD need input gradients and therefore only run against
differentiable models; anything else raises ``NotDifferentiable``. The
random-noise attack needs only scores and works on every family.

All attacks are untargeted (they push each sample away from its true label)
and keep every adversarial sample inside the inf-norm ball of radius
``epsilon`` around the clean sample, intersected with [0, 1]^F.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .models.base import Classifier, NotDifferentiable
from .numkit import Rng, as_matrix

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("attack", "epsilon", "accuracy", "flip_rate", "seed")


@dataclass
class AttackConfig:
    epsilon: float = 0.5
    steps: int = 10
    step_size: float | None = None  # None means epsilon / 4
    random_start: bool = False
    max_iters: int = 100
    clamp: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    acceptance: str = "per_sample"  # or "batch"

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.acceptance not in ("per_sample", "batch"):
            raise ValueError(f"unknown acceptance mode {self.acceptance!r}")

    @property
    def alpha(self) -> float:
        return self.epsilon / 4.0 if self.step_size is None else self.step_size

    def with_epsilon(self, eps: float) -> "AttackConfig":
        return AttackConfig(eps, self.steps, self.step_size, self.random_start, self.max_iters,
                            self.clamp, self.seed, self.acceptance)


@dataclass
class AttackOutcome:
    adversarial: np.ndarray
    per_sample_flipped: np.ndarray
    accuracy_before: float
    accuracy_after: float
    epsilon: float
    attack_name: str
    history: list[int] = field(default_factory=list)

    @property
    def flip_rate(self) -> float:
        return float(np.mean(self.per_sample_flipped)) if self.per_sample_flipped.size else 0.0


def _project(x_adv, x, eps, clamp):
    return np.clip(np.clip(x_adv, x - eps, x + eps), clamp[0], clamp[1])


def _outcome(model, x, y, adv, cfg, name, history=None) -> AttackOutcome:
    clean = model.predict_label(x)
    after = model.predict_label(adv)
    return AttackOutcome(
        adversarial=adv,
        per_sample_flipped=clean != after,
        accuracy_before=float(np.mean(clean == y)),
        accuracy_after=float(np.mean(after == y)),
        epsilon=cfg.epsilon,
        attack_name=name,
        history=history or [],
    )


def _gradient(model: Classifier, x, y):
    if not getattr(model, "differentiable", False):
        raise NotDifferentiable(f"{model.family} models expose no input gradient")
    return model.input_gradient(x, y)


def _iterate(model, x, y, cfg, start, name, observer=None) -> AttackOutcome:
    adv = start
    for _ in range(cfg.steps):
        adv = _project(adv + cfg.alpha * np.sign(_gradient(model, adv, y)), x, cfg.epsilon, cfg.clamp)
        if observer is not None:
            observer(adv)
    return _outcome(model, x, y, adv, cfg, name)


def fgsm(model: Classifier, x, y, cfg: AttackConfig) -> AttackOutcome:
    """One signed-gradient step of size epsilon."""
    x = as_matrix(x)
    y = np.asarray(y)
    adv = np.clip(x + cfg.epsilon * np.sign(_gradient(model, x, y)), cfg.clamp[0], cfg.clamp[1])
    return _outcome(model, x, y, adv, cfg, "fgsm")


def bim(model: Classifier, x, y, cfg: AttackConfig, observer: Callable | None = None) -> AttackOutcome:
    """``steps`` signed steps of ``alpha``, each projected back onto the ball and [0, 1]."""
    x = as_matrix(x)
    return _iterate(model, x, np.asarray(y), cfg, x, "bim", observer)


def pgd(model: Classifier, x, y, cfg: AttackConfig, observer: Callable | None = None) -> AttackOutcome:
    """BIM from an optional uniform random start inside the ball."""
    x = as_matrix(x)
    start = x
    if cfg.random_start:
        noise = Rng(cfg.seed).uniform(x.shape, -cfg.epsilon, cfg.epsilon)
        start = _project(x + noise, x, cfg.epsilon, cfg.clamp)
    return _iterate(model, x, np.asarray(y), cfg, start, "pgd", observer)


def random_noise_attack(model: Classifier, x, y, cfg: AttackConfig) -> AttackOutcome:
    """Repeated Gaussian perturbations with acceptance of the ones that hurt.

    Each iteration draws ``n ~ N(0, I)`` and proposes ``x + epsilon * n``,
    projected onto the epsilon ball and [0, 1].

    ``per_sample`` acceptance: a correctly classified sample adopts the first
    proposal that makes it misclassified and is then frozen. ``batch``
    acceptance: the whole proposal batch replaces the current one when its
    accuracy is strictly lower. ``history`` records the number of currently
    flipped samples after every iteration.
    """
    x = as_matrix(x)
    y = np.asarray(y)
    rng = Rng(cfg.seed)
    clean = model.predict_label(x)
    adv = x.copy()
    history: list[int] = []
    if cfg.epsilon == 0:
        return _outcome(model, x, y, adv, cfg, "random_noise", history)
    if cfg.acceptance == "per_sample":
        open_ = clean == y
        for it in range(cfg.max_iters):
            if not np.any(open_):
                break
            rows = np.flatnonzero(open_)
            # noise for iteration `it` is drawn for the full batch so streams do not
            # depend on which samples are still open
            noise = rng.child(it).normal(x.shape)[rows]
            cand = _project(x[rows] + cfg.epsilon * noise, x[rows], cfg.epsilon, cfg.clamp)
            hit = model.predict_label(cand) != y[rows]
            adv[rows[hit]] = cand[hit]
            open_[rows[hit]] = False
            history.append(int(np.sum(model.predict_label(adv) != clean)))
    else:
        current_acc = float(np.mean(clean == y))
        for it in range(cfg.max_iters):
            if current_acc == 0.0:
                break
            cand = _project(x + cfg.epsilon * rng.child(it).normal(x.shape), x, cfg.epsilon, cfg.clamp)
            acc = float(np.mean(model.predict_label(cand) == y))
            if acc < current_acc:
                adv, current_acc = cand, acc
            history.append(int(np.sum(model.predict_label(adv) != clean)))
    return _outcome(model, x, y, adv, cfg, "random_noise", history)


ATTACKS: dict[str, Callable[..., AttackOutcome]] = {
    "fgsm": fgsm,
    "bim": bim,
    "pgd": pgd,
    "random_noise": random_noise_attack,
}
GRADIENT_ATTACKS = ("fgsm", "bim", "pgd")


def epsilon_grid(start: float = 0.05, stop: float = 0.50, step: float = 0.05) -> list[float]:
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n)]


def sweep(model: Classifier, attack: str, grid: Sequence[float], x, y, cfg: AttackConfig) -> list[dict]:
    """Run ``attack`` at every epsilon of an ascending grid with a shared seed.

    A failure at one epsilon is recorded in that row's ``error`` field and the
    sweep moves on.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("epsilon grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("epsilon grid must be ascending")
    fn = ATTACKS[attack]
    rows = []
    for eps in grid:
        row = {"attack": attack, "epsilon": float(eps), "accuracy": None, "flip_rate": None,
               "seed": cfg.seed, "error": None}
        try:
            out = fn(model, x, y, cfg.with_epsilon(eps))
            row.update(accuracy=out.accuracy_after, flip_rate=out.flip_rate)
        except (NotDifferentiable, ValueError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
            log.info("sweep %s eps=%s failed: %s", attack, eps, exc)
        rows.append(row)
    return rows


def write_sweep_csv(rows: Sequence[dict], path: str | Path) -> None:
    """Write ``attack,epsilon,accuracy,flip_rate,seed``; failed points get ``n/a``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            acc = "n/a" if r["accuracy"] is None else f"{r['accuracy']:.6f}"
            fr = "n/a" if r["flip_rate"] is None else f"{r['flip_rate']:.6f}"
            w.writerow([r["attack"], f"{r['epsilon']:.4f}", acc, fr, r["seed"]])
