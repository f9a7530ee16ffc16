"""Server-side aggregation: FedAvg, Krum and Multi-Krum.

All reductions run over updates sorted by ``client_id`` so the result does
not depend on the order clients reported in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ParameterVector


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class FedAvg:
    weighting: str = "by_sample_count"

    def __post_init__(self):
        if self.weighting not in ("uniform", "by_sample_count"):
            raise AggregationError(f"unknown FedAvg weighting {self.weighting!r}")


@dataclass(frozen=True)
class Krum:
    f: int = 1

    def __post_init__(self):
        if self.f < 0:
            raise AggregationError(f"f must be >= 0, got {self.f}")


@dataclass(frozen=True)
class MultiKrum:
    f: int = 1
    m: int = 2

    def __post_init__(self):
        if self.f < 0:
            raise AggregationError(f"f must be >= 0, got {self.f}")
        if self.m < 1:
            raise AggregationError(f"m must be >= 1, got {self.m}")


AggregationStrategy = FedAvg | Krum | MultiKrum


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    params: ParameterVector
    sample_count: int = 1

    def __post_init__(self):
        if self.sample_count < 1:
            raise AggregationError(f"client {self.client_id}: sample_count must be >= 1")


def _ordered(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise AggregationError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    layout = ordered[0].params.layout
    for u in ordered:
        if u.params.layout != layout:
            raise AggregationError(f"client {u.client_id} layout {u.params.layout} != {layout}")
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise AggregationError(f"duplicate client ids: {ids}")
    return ordered


def _running_mean(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    # incremental form returns identical inputs bit-for-bit
    acc = np.zeros_like(vectors[0])
    seen = 0.0
    for vec, w in zip(vectors, weights):
        seen += w
        acc += (vec - acc) * (w / seen)
    return acc


def fedavg(updates: Sequence[ClientUpdate], weighting: str = "by_sample_count") -> ParameterVector:
    FedAvg(weighting)
    ordered = _ordered(updates)
    if weighting == "uniform":
        weights = [1.0] * len(ordered)
    else:
        weights = [float(u.sample_count) for u in ordered]
    first = ordered[0].params
    mean = _running_mean([u.params.weights for u in ordered], weights)
    return ParameterVector(mean, first.dim, first.classes)


def _check_krum(n: int, f: int) -> None:
    if f < 0:
        raise AggregationError(f"f must be >= 0, got {f}")
    if n < f + 3:
        raise AggregationError(f"Krum with f={f} needs at least {f + 3} updates, got {n}")


def pairwise_sq_distances(updates: Sequence[ClientUpdate]) -> np.ndarray:
    n = len(updates)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = updates[i].params.weights - updates[j].params.weights
            dist[i, j] = dist[j, i] = float(np.dot(d, d))
    return dist


def krum_scores(updates: Sequence[ClientUpdate], f: int) -> list[tuple[int, float]]:
    """Sum of squared distances from each update to its ``n - f - 2`` nearest peers."""
    ordered = _ordered(updates)
    n = len(ordered)
    _check_krum(n, f)
    dist = pairwise_sq_distances(ordered)
    k = n - f - 2
    scores = []
    for i, u in enumerate(ordered):
        others = np.sort(np.delete(dist[i], i))
        scores.append((u.client_id, float(others[:k].sum())))
    return scores


def _ranked(updates: Sequence[ClientUpdate], f: int) -> list[ClientUpdate]:
    ordered = _ordered(updates)
    by_id = {u.client_id: u for u in ordered}
    scores = krum_scores(ordered, f)
    # stable sort on score keeps lower client ids first among ties
    return [by_id[cid] for cid, _ in sorted(scores, key=lambda s: s[1])]


def krum_select(updates: Sequence[ClientUpdate], f: int) -> ClientUpdate:
    return _ranked(updates, f)[0]


def multi_krum_select(updates: Sequence[ClientUpdate], f: int, m: int) -> list[ClientUpdate]:
    if not 1 <= m <= len(updates):
        raise AggregationError(f"m must be in [1, {len(updates)}], got {m}")
    return sorted(_ranked(updates, f)[:m], key=lambda u: u.client_id)


def _uniform_mean(chosen: Sequence[ClientUpdate]) -> ParameterVector:
    first = chosen[0].params
    mean = _running_mean([u.params.weights for u in chosen], [1.0] * len(chosen))
    return ParameterVector(mean, first.dim, first.classes)


def multi_krum(updates: Sequence[ClientUpdate], f: int, m: int) -> ParameterVector:
    """Unweighted mean of the ``m`` best-scored updates."""
    return _uniform_mean(multi_krum_select(updates, f, m))


@dataclass(frozen=True)
class AggregateResult:
    params: ParameterVector
    selected: tuple[int, ...] | None = None


def check_feasible(strategy: AggregationStrategy, n: int) -> None:
    if isinstance(strategy, (Krum, MultiKrum)):
        _check_krum(n, strategy.f)
    if isinstance(strategy, MultiKrum) and strategy.m > n:
        raise AggregationError(f"Multi-Krum m={strategy.m} exceeds {n} clients")


def aggregate(strategy: AggregationStrategy, updates: Sequence[ClientUpdate]) -> AggregateResult:
    if isinstance(strategy, FedAvg):
        return AggregateResult(fedavg(updates, strategy.weighting))
    if isinstance(strategy, Krum):
        best = krum_select(updates, strategy.f)
        return AggregateResult(best.params, (best.client_id,))
    if isinstance(strategy, MultiKrum):
        chosen = multi_krum_select(updates, strategy.f, strategy.m)
        return AggregateResult(_uniform_mean(chosen), tuple(u.client_id for u in chosen))
    raise AggregationError(f"unknown strategy {strategy!r}")


def strategy_to_dict(strategy: AggregationStrategy) -> dict:
    if isinstance(strategy, FedAvg):
        return {"kind": "fedavg", "weighting": strategy.weighting}
    if isinstance(strategy, Krum):
        return {"kind": "krum", "f": strategy.f}
    return {"kind": "multikrum", "f": strategy.f, "m": strategy.m}


def strategy_from_dict(d: dict) -> AggregationStrategy:
    kind = d.get("kind", "fedavg")
    if kind == "fedavg":
        return FedAvg(d.get("weighting", "by_sample_count"))
    if kind == "krum":
        return Krum(int(d.get("f", 1)))
    if kind == "multikrum":
        return MultiKrum(int(d.get("f", 1)), int(d.get("m", 2)))
    raise AggregationError(f"unknown strategy kind {kind!r}")
