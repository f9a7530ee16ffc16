"""The federated round loop, the centralized training path, payload metering."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .aggregation import AggregationStrategy, ClientUpdate, FedAvg, aggregate, check_feasible
from .data import Dataset
from .metrics import ConfusionMatrix, Metrics, metrics_from_confusion
from .model import ParameterVector, TrainConfig, featurize, logits, sgd, stack, with_seed
from .partition import ClientShard


@dataclass(frozen=True)
class FLConfig:
    rounds: int = 5
    local_epochs: int = 1
    strategy: AggregationStrategy = field(default_factory=FedAvg)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")


@dataclass
class RoundRecord:
    round_index: int
    selected_client: int | None
    global_eval: Metrics
    per_client_loss: list[float]
    payload_bytes_per_client: int
    selected_clients: list[int] | None = None
    timing: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "selected_client": self.selected_client,
            "selected_clients": self.selected_clients,
            "global_eval": self.global_eval.to_dict(),
            "per_client_loss": list(self.per_client_loss),
            "payload_bytes_per_client": self.payload_bytes_per_client,
            "timing": dict(self.timing),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(
            round_index=d["round_index"],
            selected_client=d["selected_client"],
            global_eval=Metrics.from_dict(d["global_eval"]),
            per_client_loss=list(d["per_client_loss"]),
            payload_bytes_per_client=d["payload_bytes_per_client"],
            selected_clients=d.get("selected_clients"),
            timing=dict(d.get("timing", {})),
        )


class Featurized:
    """A dataset turned into a CSR matrix once, for repeated training or scoring."""

    def __init__(self, data: Dataset, dim: int):
        self.data = data
        self.X: sp.csr_matrix = stack([featurize(ex.text, dim) for ex in data.examples], dim)
        self.y = np.array([ex.label for ex in data.examples], dtype=np.int64)

    def __len__(self) -> int:
        return self.X.shape[0]

    def confusion(self, params: ParameterVector) -> ConfusionMatrix:
        pred = np.argmax(logits(params, self.X), axis=1)
        return ConfusionMatrix.from_labels(self.y, pred, params.classes)

    def metrics(self, params: ParameterVector) -> Metrics:
        return metrics_from_confusion(self.confusion(params))


def derive_seed(seed: int, round_index: int, client_id: int) -> int:
    """Per-(round, client) training seed; independent of how many clients exist."""
    return int(np.random.SeedSequence([seed, round_index, client_id]).generate_state(1, np.uint64)[0])


def payload_estimate(params: ParameterVector, rounds: int) -> int:
    """Uplink bytes per client over ``rounds`` rounds (one serialized update each)."""
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    return params.serialized_size * rounds


def _check_isolation(shards: Sequence[ClientShard], eval_data: Dataset) -> None:
    train_ids = {ex.id for s in shards for ex in s.examples}
    leaked = train_ids & eval_data.ids
    if leaked:
        raise ValueError(f"{len(leaked)} evaluation example ids also appear in training shards")


def run_fl(
    global0: ParameterVector,
    shards: Sequence[ClientShard],
    cfg: FLConfig,
    eval_data: Dataset,
    workers: int = 1,
    eval_features: Featurized | None = None,
    on_round=None,
) -> tuple[ParameterVector, list[RoundRecord]]:
    """Train for ``cfg.rounds`` broadcast / local-train / aggregate cycles.

    Each client starts every round from the current global parameters and
    trains ``cfg.local_epochs`` epochs seeded by ``derive_seed(cfg.seed, r, id)``.
    ``workers`` only sets thread-level parallelism; results do not depend on it.
    ``on_round`` is called with each :class:`RoundRecord` as it completes.
    """
    if not shards:
        raise ValueError("run_fl needs at least one client shard")
    shards = sorted(shards, key=lambda s: s.client_id)
    check_feasible(cfg.strategy, len(shards))
    _check_isolation(shards, eval_data)
    local = [Featurized(Dataset(s.examples, s.num_classes), global0.dim) for s in shards]
    evaluator = eval_features or Featurized(eval_data, global0.dim)
    payload = global0.serialized_size

    def client_step(args):
        r, shard, feats, start = args
        tc = with_seed(cfg.train, derive_seed(cfg.seed, r, shard.client_id), cfg.local_epochs)
        params, loss = sgd(start, feats.X, feats.y, tc)
        return ClientUpdate(shard.client_id, params, len(shard)), loss

    current = global0
    records = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            jobs = [(r, s, f, current) for s, f in zip(shards, local)]
            results = list(pool.map(client_step, jobs)) if pool else [client_step(j) for j in jobs]
            t1 = time.perf_counter()
            agg = aggregate(cfg.strategy, [u for u, _ in results])
            t2 = time.perf_counter()
            current = agg.params
            selected = list(agg.selected) if agg.selected is not None else None
            record = RoundRecord(
                round_index=r,
                selected_client=selected[0] if selected and len(selected) == 1 else None,
                selected_clients=selected,
                global_eval=evaluator.metrics(current),
                per_client_loss=[loss for _, loss in results],
                payload_bytes_per_client=payload,
                timing={"train_s": t1 - t0, "aggregate_s": t2 - t1, "round_s": time.perf_counter() - t0},
            )
            records.append(record)
            if on_round is not None:
                on_round(record)
    finally:
        if pool:
            pool.shutdown()
    return current, records


def run_centralized(
    start: ParameterVector,
    data: Dataset,
    epochs: int,
    train: TrainConfig,
    eval_data: Dataset,
    eval_features: Featurized | None = None,
) -> tuple[ParameterVector, Metrics]:
    """Plain SGD on pooled data; ``epochs == 0`` returns ``start`` untouched."""
    if len(data) == 0:
        raise ValueError("run_centralized needs non-empty data")
    evaluator = eval_features or Featurized(eval_data, start.dim)
    params = start
    if epochs > 0:
        feats = Featurized(data, start.dim)
        params, _ = sgd(start, feats.X, feats.y, with_seed(train, train.seed, epochs))
    return params, evaluator.metrics(params)
