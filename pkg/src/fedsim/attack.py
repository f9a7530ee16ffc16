"""Label-flipping poisoning of selected client shards."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .data import DEFAULT_NUM_CLASSES, Dataset, Example
from .partition import ClientShard

RATIOS = {"none": 0.0, "25%": 0.25, "50%": 0.5}


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class FlipMap:
    mapping: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mapping", tuple(int(m) for m in self.mapping))
        k = len(self.mapping)
        if k == 0:
            raise AttackError("flip map is empty")
        bad = [m for m in self.mapping if not 0 <= m < k]
        if bad:
            raise AttackError(f"flip map targets outside [0, {k}): {bad}")

    @classmethod
    def default(cls, num_classes: int = DEFAULT_NUM_CLASSES) -> "FlipMap":
        """First half of the classes onto the second half (c -> c + K//2); rest fixed."""
        half = num_classes // 2
        return cls(tuple(c + half if c < half else c for c in range(num_classes)))

    @property
    def num_classes(self) -> int:
        return len(self.mapping)

    def __call__(self, label: int) -> int:
        return self.mapping[label]


@dataclass(frozen=True)
class AttackSpec:
    toxic_clients: frozenset[int] = frozenset()
    flip_map: FlipMap = field(default_factory=FlipMap.default)

    def __post_init__(self):
        object.__setattr__(self, "toxic_clients", frozenset(int(c) for c in self.toxic_clients))


def flip_examples(examples, flip_map: FlipMap) -> tuple[Example, ...]:
    return tuple(replace(ex, label=flip_map(ex.label)) for ex in examples)


def apply_attack(shards: Sequence[ClientShard], spec: AttackSpec) -> list[ClientShard]:
    """Relabel every example on the toxic shards through ``spec.flip_map``."""
    known = {s.client_id for s in shards}
    unknown = sorted(spec.toxic_clients - known)
    if unknown:
        raise AttackError(f"unknown client ids in attack: {unknown}")
    out = []
    for shard in shards:
        if shard.client_id not in spec.toxic_clients:
            out.append(shard)
            continue
        if spec.flip_map.num_classes != shard.num_classes:
            raise AttackError(
                f"flip map covers {spec.flip_map.num_classes} classes, shard has {shard.num_classes}"
            )
        out.append(replace(shard, examples=flip_examples(shard.examples, spec.flip_map), attacked=True))
    return out


def flip_dataset(data: Dataset, ids, flip_map: FlipMap) -> Dataset:
    """Flip labels of the examples whose id is in ``ids`` (centralized poisoning)."""
    ids = frozenset(ids)
    return Dataset(
        tuple(replace(ex, label=flip_map(ex.label)) if ex.id in ids else ex for ex in data.examples),
        data.num_classes,
    )


def _count_for(n: int, ratio: float) -> int:
    if ratio <= 0:
        return 0
    return min(n, max(1, int(n * ratio + 0.5)))


def parse_ratio(ratio) -> float:
    if isinstance(ratio, str):
        if ratio not in RATIOS:
            raise AttackError(f"attack ratio must be one of {sorted(RATIOS)}, got {ratio!r}")
        return RATIOS[ratio]
    ratio = float(ratio)
    if not 0.0 <= ratio <= 1.0:
        raise AttackError(f"attack ratio must be in [0, 1], got {ratio}")
    return ratio


def iid_attack_assignment(shards: Sequence[ClientShard], ratio, flip_map: FlipMap | None = None) -> AttackSpec:
    """Toxic = the lowest client ids, ``round(n * ratio)`` of them (at least one)."""
    ids = sorted(s.client_id for s in shards)
    count = _count_for(len(ids), parse_ratio(ratio))
    return AttackSpec(frozenset(ids[:count]), flip_map or FlipMap.default(shards[0].num_classes))


def noniid_attack_assignment(
    shards: Sequence[ClientShard], ratio, flip_map: FlipMap | None = None
) -> AttackSpec:
    """Poison by language: English at 25%, English and French at 50%.

    When a preferred language is not held by any shard, its slot goes to the
    lowest client id not already chosen.
    """
    r = parse_ratio(ratio)
    ids = sorted(s.client_id for s in shards)
    count = _count_for(len(ids), r)
    preferred = ["en", "fr"][:count]
    chosen: list[int] = []
    for lang in preferred:
        holder = next((s.client_id for s in sorted(shards, key=lambda s: s.client_id) if lang in s.languages), None)
        if holder is not None and holder not in chosen:
            chosen.append(holder)
    for cid in ids:
        if len(chosen) >= count:
            break
        if cid not in chosen:
            chosen.append(cid)
    return AttackSpec(frozenset(chosen), flip_map or FlipMap.default(shards[0].num_classes))
