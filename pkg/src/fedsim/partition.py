"""Client shards: IID deal-out, per-language Non-IID split, and pooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import DEFAULT_NUM_CLASSES, Dataset, Example


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    examples: tuple[Example, ...]
    attacked: bool = False
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not self.examples:
            raise PartitionError(f"client {self.client_id} has no examples")

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def languages(self) -> frozenset[str]:
        return frozenset(ex.language for ex in self.examples)


@dataclass(frozen=True)
class IID:
    num_clients: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise PartitionError(f"num_clients must be >= 1, got {self.num_clients}")


@dataclass(frozen=True)
class NonIID:
    # None means: sorted languages of the data, one client each
    language_assignment: Mapping[str, int] | None = None


PartitionSpec = IID | NonIID


def partition_iid(data: Dataset, n: int, seed: int) -> list[ClientShard]:
    """Shuffle with ``seed`` and deal round-robin into ``n`` disjoint shards."""
    if n < 1:
        raise PartitionError(f"need at least one client, got {n}")
    if n > len(data):
        raise PartitionError(f"cannot split {len(data)} examples across {n} clients")
    order = np.random.default_rng(seed).permutation(len(data))
    buckets: list[list[Example]] = [[] for _ in range(n)]
    for pos, i in enumerate(order):
        buckets[pos % n].append(data.examples[i])
    return [ClientShard(cid, tuple(b), num_classes=data.num_classes) for cid, b in enumerate(buckets)]


def identity_assignment(languages) -> dict[str, int]:
    return {lang: cid for cid, lang in enumerate(sorted(languages))}


def partition_noniid(data: Dataset, assignment: Mapping[str, int] | None = None) -> list[ClientShard]:
    """One shard per client id, holding every example whose language maps to it.

    Several languages may map to one client. Original example order is kept.
    """
    if assignment is None:
        assignment = identity_assignment(data.languages)
    missing = sorted(data.languages - set(assignment))
    if missing:
        raise PartitionError(f"languages without a client: {', '.join(missing)}")
    ids = sorted(set(assignment.values()))
    if ids != list(range(len(ids))):
        raise PartitionError(f"client ids must be contiguous from 0, got {ids}")
    buckets: list[list[Example]] = [[] for _ in ids]
    for ex in data.examples:
        buckets[assignment[ex.language]].append(ex)
    for cid, b in enumerate(buckets):
        if not b:
            langs = sorted(lang for lang, c in assignment.items() if c == cid)
            raise PartitionError(f"client {cid} ({', '.join(langs)}) received no examples")
    return [ClientShard(cid, tuple(b), num_classes=data.num_classes) for cid, b in enumerate(buckets)]


def make_shards(data: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if isinstance(spec, IID):
        return partition_iid(data, spec.num_clients, spec.seed)
    return partition_noniid(data, spec.language_assignment)


def pool(shards: Sequence[ClientShard]) -> Dataset:
    """Concatenate shard examples in client-id order, labels as they stand."""
    if not shards:
        raise PartitionError("nothing to pool")
    ordered = sorted(shards, key=lambda s: s.client_id)
    examples = tuple(ex for s in ordered for ex in s.examples)
    return Dataset(examples, max(s.num_classes for s in shards))
