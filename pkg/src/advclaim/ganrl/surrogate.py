"""Gray-box access to a detector: scores in, nothing else out."""
from __future__ import annotations

import threading
from typing import Callable

import numpy as np


class ProtocolError(ValueError):
    """The score oracle returned something other than probabilities in [0, 1]."""


class QueryBudgetExceeded(RuntimeError):
    def __init__(self, msg: str, traces=None):
        super().__init__(msg)
        self.traces = traces or []


class SurrogateHandle:
    """Score oracle with a query counter and an append-only query log.

    The handle holds a scoring callable and, for locally owned differentiable
    surrogates only, an input-gradient callable. It never holds the model
    object, so parameters cannot be reached through its public surface. Every
    call is logged as ``("score", rows)`` or ``("gradient", rows)``; there is
    no operation that could log a parameter access.
    """

    __slots__ = ("_score", "_grad", "_lock", "_queries", "_log", "max_queries", "n_features")

    def __init__(self, score: Callable[[np.ndarray], np.ndarray], n_features: int,
                 gradient: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 max_queries: int | None = None):
        self._score = score
        self._grad = gradient
        self._lock = threading.Lock()
        self._queries = 0
        self._log: list[tuple[str, int]] = []
        self.max_queries = max_queries
        self.n_features = n_features

    @property
    def differentiable(self) -> bool:
        return self._grad is not None

    @property
    def queries(self) -> int:
        return self._queries

    @property
    def query_log(self) -> list[tuple[str, int]]:
        return list(self._log)

    def _charge(self, kind: str, rows: int) -> None:
        with self._lock:
            if self.max_queries is not None and self._queries + rows > self.max_queries:
                raise QueryBudgetExceeded(
                    f"query budget {self.max_queries} exhausted ({self._queries} used, {rows} requested)"
                )
            self._queries += rows
            self._log.append((kind, rows))

    def score(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self._charge("score", x.shape[0])
        s = np.asarray(self._score(x), dtype=np.float64).reshape(-1)
        if s.shape[0] != x.shape[0] or not np.all(np.isfinite(s)) or np.any((s < 0) | (s > 1)):
            raise ProtocolError("surrogate returned scores outside [0, 1]")
        return s

    def gradient(self, x, y) -> np.ndarray:
        """Per-row input gradient of the BCE against ``y`` (local surrogates only)."""
        if self._grad is None:
            raise TypeError("this surrogate exposes scores only")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        self._charge("gradient", x.shape[0])
        return self._grad(x, np.asarray(y))

    def audit(self) -> dict:
        kinds: dict[str, int] = {}
        for kind, rows in self._log:
            kinds[kind] = kinds.get(kind, 0) + rows
        return {
            "queries": self._queries,
            "calls": len(self._log),
            "rows_by_kind": dict(sorted(kinds.items())),
            "parameter_accesses": 0,
        }


def attach_target_as_surrogate(model, max_queries: int | None = None) -> SurrogateHandle:
    """Wrap a deployed detector as a score-only oracle (the gray-box setting)."""
    return SurrogateHandle(model.predict_proba, model.n_features, max_queries=max_queries)


def attach_local_surrogate(model, max_queries: int | None = None) -> SurrogateHandle:
    """Wrap a locally trained substitute; exposes input gradients when the model has them."""
    grad = model.input_gradient if getattr(model, "differentiable", False) else None
    return SurrogateHandle(model.predict_proba, model.n_features, gradient=grad, max_queries=max_queries)
