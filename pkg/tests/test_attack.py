import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsim.attack import (
    AttackError,
    AttackSpec,
    FlipMap,
    apply_attack,
    flip_dataset,
    iid_attack_assignment,
    noniid_attack_assignment,
)
from fedsim.data import Dataset, Example
from fedsim.partition import partition_iid, partition_noniid, pool


def mixed(n=80, languages=("en", "es", "fr", "it")):
    return Dataset(tuple(Example(i, f"w{i}", i % 20, languages[i % len(languages)]) for i in range(n)), 20)


def test_default_map():
    fm = FlipMap.default(20)
    assert fm(0) == 10 and fm(9) == 19
    assert fm(15) == 15 and fm(10) == 10


def test_default_map_is_idempotent():
    fm = FlipMap.default(20)
    assert all(fm(fm(c)) == fm(c) for c in range(20))


def test_flip_map_validation():
    with pytest.raises(AttackError):
        FlipMap((0, 5))


def test_empty_toxic_set_is_noop():
    shards = partition_iid(mixed(), 4, 0)
    assert apply_attack(shards, AttackSpec()) == shards


def test_unknown_client():
    shards = partition_iid(mixed(), 4, 0)
    with pytest.raises(AttackError, match="7"):
        apply_attack(shards, AttackSpec({7}))


@given(st.sets(st.integers(0, 3)), st.integers(0, 1000))
def test_attack_changes_only_labels_of_toxic_shards(toxic, seed):
    shards = partition_iid(mixed(), 4, seed)
    out = apply_attack(shards, AttackSpec(toxic))
    fm = FlipMap.default(20)
    for before, after in zip(shards, out):
        assert len(before) == len(after)
        assert [e.text for e in before.examples] == [e.text for e in after.examples]
        if before.client_id in toxic:
            assert after.attacked
            assert [fm(e.label) for e in before.examples] == [e.label for e in after.examples]
        else:
            assert after == before and not after.attacked


def test_attacking_twice_equals_once_under_default_map():
    shards = partition_iid(mixed(), 4, 0)
    once = apply_attack(shards, AttackSpec({0, 2}))
    twice = apply_attack(once, AttackSpec({0, 2}))
    assert [s.examples for s in once] == [s.examples for s in twice]


def test_centralized_parity():
    data = mixed()
    shards = partition_iid(data, 4, 9)
    spec = AttackSpec({1, 3})
    attacked_then_pooled = pool(apply_attack(shards, spec))
    ids = {ex.id for s in shards if s.client_id in spec.toxic_clients for ex in s.examples}
    pooled_then_flipped = flip_dataset(pool(shards), ids, spec.flip_map)
    assert attacked_then_pooled.examples == pooled_then_flipped.examples


def test_noniid_assignment_by_language():
    shards = partition_noniid(mixed(), {"en": 0, "es": 1, "fr": 2, "it": 3})
    assert noniid_attack_assignment(shards, "25%").toxic_clients == {0}
    assert noniid_attack_assignment(shards, "50%").toxic_clients == {0, 2}
    shuffled = partition_noniid(mixed(), {"it": 0, "fr": 1, "es": 2, "en": 3})
    assert noniid_attack_assignment(shuffled, "50%").toxic_clients == {3, 1}


def test_noniid_assignment_fallback():
    shards = partition_noniid(mixed(languages=("es", "it", "pt", "de")))
    assert noniid_attack_assignment(shards, "50%").toxic_clients == {0, 1}
    assert noniid_attack_assignment(shards, "none").toxic_clients == frozenset()


def test_iid_assignment_lowest_ids():
    shards = partition_iid(mixed(), 4, 0)
    assert iid_attack_assignment(shards, "25%").toxic_clients == {0}
    assert iid_attack_assignment(shards, "50%").toxic_clients == {0, 1}
    eight = partition_iid(mixed(), 8, 0)
    assert iid_attack_assignment(eight, "25%").toxic_clients == {0, 1}
    two = partition_iid(mixed(), 2, 0)
    assert iid_attack_assignment(two, "25%").toxic_clients == {0}


def test_bad_ratio():
    with pytest.raises(AttackError):
        iid_attack_assignment(partition_iid(mixed(), 4, 0), "30%")
