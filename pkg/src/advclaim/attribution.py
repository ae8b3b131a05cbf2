"""Permutation-sampling Shapley values for any score function.

Each sampled permutation starts from one background row and switches features
to the explained row's values in permutation order; the score change at each
switch is that feature's marginal contribution. Averaging over permutations
estimates the Shapley value of every feature. Permutation ``k`` draws its
order and background row from its own seeded stream, so results do not depend
on how the work is split across threads.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numkit import Rng, ShapeError

DEFAULT_BACKGROUND = 50


def worker_count() -> int:
    """Threads allowed by ``ADVCLAIM_THREADS`` (1 when unset)."""
    try:
        return max(1, int(os.environ.get("ADVCLAIM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class AttributionResult:
    names: list[str]
    values: np.ndarray
    std_errors: np.ndarray
    base_value: float
    score: float
    efficiency_se: float
    n_permutations: int
    seed: int

    @property
    def per_feature(self) -> list[tuple[str, float]]:
        return list(zip(self.names, self.values.tolist()))

    def efficiency_gap(self) -> float:
        """``sum(values) - (score - base_value)``; zero up to Monte-Carlo error."""
        return float(self.values.sum() - (self.score - self.base_value))


def _score_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    return model.predict_proba if hasattr(model, "predict_proba") else model


def _marginals(score, x, background, seed, perms: range) -> np.ndarray:
    f = x.size
    chains = np.empty((len(perms), f + 1, f))
    orders = np.empty((len(perms), f), dtype=np.int64)
    for row, k in enumerate(perms):
        rng = Rng(seed).child(k)
        order = rng.permutation(f)
        z = background[int(rng.integers(0, background.shape[0]))].copy()
        chains[row, 0] = z
        for i, j in enumerate(order, start=1):
            z[j] = x[j]
            chains[row, i] = z
        orders[row] = order
    vals = np.asarray(score(chains.reshape(-1, f)), dtype=np.float64).reshape(len(perms), f + 1)
    steps = np.diff(vals, axis=1)
    out = np.empty((len(perms), f))
    np.put_along_axis(out, orders, steps, axis=1)
    return out


def mc_shapley(model, x, background, n_permutations: int = 200, seed: int = 0,
               names: Sequence[str] | None = None, chunk: int = 64, threads: int | None = None
               ) -> AttributionResult:
    """Estimate per-feature Shapley values of ``model``'s score at ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise ValueError("background set is empty")
    if n_permutations < 1:
        raise ValueError("n_permutations must be at least 1")
    if background.shape[1] != x.size:
        raise ShapeError(f"x has {x.size} features but background has {background.shape[1]}")
    score = _score_fn(model)
    blocks = [range(s, min(s + chunk, n_permutations)) for s in range(0, n_permutations, chunk)]
    threads = threads or worker_count()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda b: _marginals(score, x, background, seed, b), blocks))
    else:
        parts = [_marginals(score, x, background, seed, b) for b in blocks]
    m = np.vstack(parts)
    n = m.shape[0]
    se = m.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(x.size, np.inf)
    totals = m.sum(axis=1)
    eff_se = float(totals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    fx = float(np.asarray(score(x[None, :])).reshape(-1)[0])
    return AttributionResult(
        names=list(names) if names is not None else [f"f{j}" for j in range(x.size)],
        values=m.mean(axis=0),
        std_errors=se,
        base_value=float(np.mean(score(background))),
        score=fx,
        efficiency_se=eff_se,
        n_permutations=n_permutations,
        seed=seed,
    )


def global_importance(model, dataset, n_explained: int = 20, n_permutations: int = 100, seed: int = 0,
                      background_size: int = DEFAULT_BACKGROUND) -> list[tuple[str, float, int]]:
    """Mean absolute Shapley value per feature over test rows, ranked descending.

    The background is ``background_size`` training rows and the explained rows
    are ``n_explained`` test rows, both drawn with ``seed``. Returns
    ``(name, mean_abs_shapley, rank)`` with rank 1 first.
    """
    x_train, _ = dataset.train
    x_test, _ = dataset.test
    if n_explained > x_test.shape[0]:
        raise ValueError(f"n_explained={n_explained} exceeds the {x_test.shape[0]} test rows")
    rng = Rng(seed)
    bg = x_train[np.sort(rng.choice(x_train.shape[0], min(background_size, x_train.shape[0])))]
    rows = x_test[np.sort(rng.choice(x_test.shape[0], n_explained))]
    total = np.zeros(dataset.n_features)
    for i, row in enumerate(rows):
        res = mc_shapley(model, row, bg, n_permutations, seed=seed * 1_000_003 + i)
        total += np.abs(res.values)
    mean_abs = total / max(n_explained, 1)
    order = np.argsort(-mean_abs, kind="stable")
    names = dataset.feature_names
    return [(names[j], float(mean_abs[j]), r) for r, j in enumerate(order, start=1)]


def write_importance_csv(ranking, path: str | Path, top_k: int | None = None) -> None:
    rows = ranking if top_k is None else ranking[:top_k]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "mean_abs_shapley", "rank"])
        for name, val, rank in rows:
            w.writerow([name, f"{val:.8f}", rank])
