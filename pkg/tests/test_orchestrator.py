import numpy as np
import pytest

from fedsim.aggregation import AggregationError, FedAvg, Krum, MultiKrum
from fedsim.attack import AttackSpec, FlipMap, apply_attack
from fedsim.data import SyntheticCorpusSpec, generate_synthetic
from fedsim.model import ParameterVector, TrainConfig, featurize, local_train
from fedsim.orchestrator import (
    FLConfig,
    RoundRecord,
    derive_seed,
    payload_estimate,
    run_centralized,
    run_fl,
)
from fedsim.partition import partition_iid

DIM = 2**10
K = 10


@pytest.fixture(scope="module")
def corpus():
    spec = SyntheticCorpusSpec(num_classes=K, languages=("en", "fr"), examples_per_language=120,
                               vocab_size_per_class=8, seed=4)
    train = generate_synthetic(spec)
    test = generate_synthetic(SyntheticCorpusSpec(num_classes=K, languages=("en", "fr"), examples_per_language=40,
                                                  vocab_size_per_class=8, seed=5)).reindexed(len(train))
    return train, test


def cfg(**kw):
    base = dict(rounds=3, local_epochs=1, train=TrainConfig(learning_rate=0.5, batch_size=8), seed=7)
    base.update(kw)
    return FLConfig(**base)


def test_single_client_single_round_equals_local_train(corpus):
    train, test = corpus
    shards = partition_iid(train, 1, 0)
    start = ParameterVector.zeros(DIM, K)
    c = cfg(rounds=1)
    out, records = run_fl(start, shards, c, test)
    tc = TrainConfig(learning_rate=0.5, batch_size=8, epochs=1, seed=derive_seed(7, 0, 0))
    ref = local_train(start, [(featurize(e.text, DIM), e.label) for e in shards[0].examples], tc)
    assert out.to_bytes() == ref.to_bytes()
    assert len(records) == 1


def test_zero_learning_rate_leaves_global_unchanged(corpus):
    train, test = corpus
    start = ParameterVector(np.random.default_rng(0).normal(size=DIM * K + K), DIM, K)
    out, records = run_fl(start, partition_iid(train, 4, 0), cfg(train=TrainConfig(learning_rate=0.0)), test)
    assert np.array_equal(out.weights, start.weights)
    assert len({r.global_eval.macro_f1 for r in records}) == 1


def test_workers_do_not_change_results(corpus):
    train, test = corpus
    shards = partition_iid(train, 4, 1)
    start = ParameterVector.zeros(DIM, K)
    a, ra = run_fl(start, shards, cfg(), test, workers=1)
    b, rb = run_fl(start, shards, cfg(), test, workers=4)
    assert a.to_bytes() == b.to_bytes()
    assert [r.per_client_loss for r in ra] == [r.per_client_loss for r in rb]


def test_shard_order_does_not_matter(corpus):
    train, test = corpus
    shards = partition_iid(train, 4, 1)
    start = ParameterVector.zeros(DIM, K)
    a, _ = run_fl(start, shards, cfg(), test)
    b, _ = run_fl(start, shards[::-1], cfg(), test)
    assert a.to_bytes() == b.to_bytes()


def test_records_and_payload(corpus):
    train, test = corpus
    start = ParameterVector.zeros(DIM, K)
    seen = []
    _, records = run_fl(start, partition_iid(train, 4, 0), cfg(rounds=4), test, on_round=seen.append)
    assert [r.round_index for r in records] == [0, 1, 2, 3]
    assert seen == records
    expected = (DIM * K + K) * 8 + 16
    assert all(r.payload_bytes_per_client == expected for r in records)
    assert all(len(r.per_client_loss) == 4 for r in records)
    assert all(r.selected_client is None for r in records)
    assert set(records[0].timing) == {"train_s", "aggregate_s", "round_s"}
    assert RoundRecord.from_dict(records[0].to_dict()).to_dict() == records[0].to_dict()


def test_payload_formula():
    params = ParameterVector.zeros(2**16, 20)
    assert params.serialized_size == (2**16 * 20 + 20) * 8 + 16 == 10_485_936
    assert payload_estimate(params, 5) == 5 * 10_485_936
    assert payload_estimate(params, 0) == 0
    with pytest.raises(ValueError):
        payload_estimate(params, -1)


def test_krum_records_selection(corpus):
    train, test = corpus
    shards = apply_attack(partition_iid(train, 4, 0), AttackSpec({0}, FlipMap.default(K)))
    warm, _ = run_centralized(ParameterVector.zeros(DIM, K), train, 3, TrainConfig(learning_rate=0.5), test)
    _, records = run_fl(warm, shards, cfg(strategy=Krum(1)), test)
    assert all(r.selected_client in range(4) for r in records)
    assert all(r.selected_clients == [r.selected_client] for r in records)
    _, mk = run_fl(warm, shards, cfg(strategy=MultiKrum(1, 2)), test)
    assert all(r.selected_client is None and len(r.selected_clients) == 2 for r in mk)


def test_krum_infeasible_fails_before_training(corpus):
    train, test = corpus
    with pytest.raises(AggregationError):
        run_fl(ParameterVector.zeros(DIM, K), partition_iid(train, 3, 0), cfg(strategy=Krum(1)), test)


def test_isolation_violation(corpus):
    train, _ = corpus
    with pytest.raises(ValueError, match="also appear"):
        run_fl(ParameterVector.zeros(DIM, K), partition_iid(train, 2, 0), cfg(), train)


def test_derive_seed_properties():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert len({derive_seed(0, r, c) for r in range(5) for c in range(8)}) == 40


def test_config_validation():
    with pytest.raises(ValueError):
        FLConfig(rounds=0)
    with pytest.raises(ValueError):
        FLConfig(local_epochs=0)


def test_centralized_zero_epochs_is_identity(corpus):
    train, test = corpus
    start = ParameterVector(np.random.default_rng(1).normal(size=DIM * K + K), DIM, K)
    out, metrics = run_centralized(start, train, 0, TrainConfig(), test)
    assert out is start
    assert 0.0 <= metrics.macro_f1 <= 1.0


def test_centralized_learns(corpus):
    train, test = corpus
    _, metrics = run_centralized(ParameterVector.zeros(DIM, K), train, 5,
                                 TrainConfig(learning_rate=0.5, batch_size=8), test)
    assert metrics.macro_f1 > 0.5


def test_fedavg_improves_over_rounds(corpus):
    train, test = corpus
    _, records = run_fl(ParameterVector.zeros(DIM, K), partition_iid(train, 4, 0), cfg(rounds=5, strategy=FedAvg()),
                        test)
    assert np.mean(records[-1].per_client_loss) < np.mean(records[0].per_client_loss)
    assert records[-1].global_eval.macro_f1 > 0.5
