from __future__ import annotations

import numpy as np
import pytest

from fragpair.data import Dataset, generate_synthetic
from fragpair.experts import (
    ExpertError,
    FeatureBank,
    build_feature_bank,
    classify_pair,
    init_ensemble,
    knn_classify,
    knn_votes,
    pair_features,
    train_experts_epoch,
)
from fragpair.fragments import JitteredScheme, Pairing, fragment_labels
from fragpair.net import forward

STRIDE = Pairing(pairs=((1, 3), (2, 4)))


def clean_dataset(n: int = 400, seed: int = 0) -> Dataset:
    return generate_synthetic(n, 2, 0.0, 100.0, feature_noise_std=0.05, seed=seed)


def make_ensemble(ds: Dataset, seed: int = 0, objective: str = "classify"):
    scheme = fragment_labels(ds, 4)
    ens = init_ensemble(
        STRIDE,
        input_dim=ds.d,
        hidden_dims=(16, 8),
        activation="relu",
        seed=seed,
        objective=objective,
        label_lo=ds.label_min,
        label_range=ds.label_range,
    )
    return ens, scheme


class TestEnsembleInit:
    def test_one_expert_per_pair(self) -> None:
        ds = clean_dataset()
        ens, _ = make_ensemble(ds)
        assert set(ens.experts) == {(1, 3), (2, 4)}
        for net in ens.experts.values():
            assert net.spec.output_dim == 1

    def test_experts_get_distinct_seeds(self) -> None:
        ds = clean_dataset()
        ens, _ = make_ensemble(ds)
        w13 = ens.experts[(1, 3)].weights[0]
        w24 = ens.experts[(2, 4)].weights[0]
        assert not np.array_equal(w13, w24)


class TestTraining:
    def test_separated_fragments_reach_high_accuracy(self) -> None:
        ds = clean_dataset(n=400)
        ens, scheme = make_ensemble(ds)
        js = JitteredScheme(base=scheme, delta=0.0)
        for epoch in range(50):
            train_experts_epoch(ens, ds, js, lr=0.1, batch_size=32, seed=epoch)
        assignment = scheme.assign_many(ds.y)
        for pair in STRIDE.pairs:
            members = np.flatnonzero(np.isin(assignment, pair))
            hits = sum(
                classify_pair(ens, pair, ds.x[idx]) == assignment[idx]
                for idx in members
            )
            assert hits / len(members) > 0.95

    def test_lr_zero_keeps_losses_constant(self) -> None:
        ds = clean_dataset(n=200)
        ens, scheme = make_ensemble(ds)
        js = JitteredScheme(base=scheme, delta=0.0)
        first = train_experts_epoch(ens, ds, js, lr=0.0, batch_size=64, seed=1)
        second = train_experts_epoch(ens, ds, js, lr=0.0, batch_size=64, seed=2)
        for pair in STRIDE.pairs:
            assert first[pair] == pytest.approx(second[pair], abs=1e-12)

    def test_identical_seeds_identical_trajectories(self) -> None:
        ds = clean_dataset(n=200)
        trajectories = []
        for _ in range(2):
            ens, scheme = make_ensemble(ds, seed=5)
            js = JitteredScheme(base=scheme, delta=0.0)
            trajectories.append(
                [train_experts_epoch(ens, ds, js, 0.1, 32, seed=e) for e in range(5)]
            )
        assert trajectories[0] == trajectories[1]

    def test_empty_class_error_names_pair(self) -> None:
        # No labels land in fragment 3, starving expert (1, 3) of one class.
        rng = np.random.default_rng(0)
        y = np.concatenate(
            [rng.uniform(0, 25, 50), rng.uniform(30, 45, 50), rng.uniform(80, 100, 50)]
        )
        y[0], y[-1] = 0.0, 100.0
        ds = Dataset(x=np.stack([y / 100.0, y / 100.0], axis=1), y=y)
        with pytest.warns(UserWarning):
            scheme = fragment_labels(ds, 4)
            ens, _ = make_ensemble(ds)
        js = JitteredScheme(base=scheme, delta=0.0)
        with pytest.raises(ExpertError, match=r"\(1, 3\)"):
            train_experts_epoch(ens, ds, js, 0.1, 32, seed=0)

    def test_overlap_duplicates_with_both_labels(self) -> None:
        # Adjacent pair plus a wide jitter buffer: samples near the shared
        # boundary must appear once per fragment in the pair's training set.
        from fragpair.experts import _pair_training_set

        ds = clean_dataset(n=300)
        scheme = fragment_labels(ds, 4)
        js = JitteredScheme(base=scheme, delta=4.0)
        rows, tags = _pair_training_set(ds, js, (1, 2))
        duplicated = [r for r in np.unique(rows) if (rows == r).sum() == 2]
        assert duplicated
        for r in duplicated:
            assert sorted(tags[rows == r]) == [1, 2]


class TestClassifyPair:
    def _forced_logit_ensemble(self, ds: Dataset, logit: float):
        ens, scheme = make_ensemble(ds)
        net = ens.experts[(1, 3)]
        for W in net.weights:
            W[:] = 0.0
        net.biases[-1][:] = logit
        return ens

    def test_positive_logit_lower_fragment(self) -> None:
        ds = clean_dataset(50)
        ens = self._forced_logit_ensemble(ds, 3.2)
        assert classify_pair(ens, (1, 3), ds.x[0]) == 1

    def test_negative_logit_higher_fragment(self) -> None:
        ds = clean_dataset(50)
        ens = self._forced_logit_ensemble(ds, -0.1)
        assert classify_pair(ens, (1, 3), ds.x[0]) == 3

    def test_zero_logit_goes_to_higher_index(self) -> None:
        ds = clean_dataset(50)
        ens = self._forced_logit_ensemble(ds, 0.0)
        assert classify_pair(ens, (1, 3), ds.x[0]) == 3

    def test_unknown_pair(self) -> None:
        ds = clean_dataset(50)
        ens, _ = make_ensemble(ds)
        with pytest.raises(ExpertError):
            classify_pair(ens, (1, 2), ds.x[0])


class TestFeatureBank:
    def test_partition_without_jitter(self) -> None:
        ds = clean_dataset(n=100)
        ens, scheme = make_ensemble(ds)
        js = JitteredScheme(base=scheme, delta=0.0)
        bank = build_feature_bank(ens, ds, js)
        total = sum(bank.size(pair) for pair in STRIDE.pairs)
        assert total == 100
        for pair in STRIDE.pairs:
            assert set(np.unique(bank.frag_ids[pair])) <= set(pair)

    def test_jitter_overlap_adds_entries(self) -> None:
        ds = clean_dataset(n=300)
        ens, scheme = make_ensemble(ds)
        bank0 = build_feature_bank(ens, ds, JitteredScheme(base=scheme, delta=0.0))
        bank5 = build_feature_bank(ens, ds, JitteredScheme(base=scheme, delta=5.0))
        assert sum(bank5.size(p) for p in STRIDE.pairs) > sum(
            bank0.size(p) for p in STRIDE.pairs
        )

    def test_bank_features_equal_expert_forward(self) -> None:
        ds = clean_dataset(n=60)
        ens, scheme = make_ensemble(ds)
        js = JitteredScheme(base=scheme, delta=0.0)
        bank = build_feature_bank(ens, ds, js)
        assignment = scheme.assign_many(ds.y)
        pair = (1, 3)
        member_rows = np.flatnonzero(np.isin(assignment, pair))
        for row_pos, ds_idx in enumerate(member_rows):
            _, feats = forward(ens.experts[pair], ds.x[ds_idx])
            # Single-row and batched matmuls may differ in the last ulp.
            assert np.allclose(bank.features[pair][row_pos], feats, rtol=0, atol=1e-12)


class TestKnn:
    def _bank(self, n: int = 200, seed: int = 0, h: int = 4) -> FeatureBank:
        rng = np.random.default_rng(seed)
        bank = FeatureBank()
        bank.features[(1, 3)] = rng.normal(size=(n, h))
        bank.frag_ids[(1, 3)] = rng.choice([1, 3], size=n)
        return bank

    def test_exact_hit_k1(self) -> None:
        bank = self._bank()
        for idx in (0, 17, 199):
            got = knn_classify(bank, (1, 3), bank.features[(1, 3)][idx], K=1)
            assert got == bank.frag_ids[(1, 3)][idx]

    def test_majority_two_to_one(self) -> None:
        bank = FeatureBank()
        bank.features[(1, 3)] = np.array([[0.0], [0.1], [0.2], [5.0]])
        bank.frag_ids[(1, 3)] = np.array([1, 1, 3, 3])
        assert knn_classify(bank, (1, 3), np.array([0.05]), K=3) == 1

    def test_agrees_with_naive_oracle(self) -> None:
        bank = self._bank(n=200, seed=1)
        feats = bank.features[(1, 3)]
        tags = bank.frag_ids[(1, 3)]
        rng = np.random.default_rng(2)
        queries = rng.normal(size=(50, 4))
        got = knn_votes(bank, (1, 3), queries, K=5)
        for q, vote in zip(queries, got):
            dists = np.linalg.norm(feats - q, axis=1)
            order = sorted(range(len(dists)), key=lambda r: (dists[r], r))[:5]
            ones = sum(tags[r] == 1 for r in order)
            assert vote == (1 if ones > 2 else 3)

    def test_exact_distance_ties_prefer_lower_index(self) -> None:
        bank = FeatureBank()
        bank.features[(1, 3)] = np.array([[1.0], [1.0], [1.0], [1.0], [9.0]])
        bank.frag_ids[(1, 3)] = np.array([1, 3, 3, 3, 1])
        # All four near entries tie at distance zero; K=1 must take index 0.
        assert knn_classify(bank, (1, 3), np.array([1.0]), K=1) == 1

    def test_oversized_k_warns_and_uses_bank(self) -> None:
        bank = self._bank(n=6, seed=3)
        with pytest.warns(UserWarning, match="exceeds bank size"):
            vote = knn_classify(bank, (1, 3), np.zeros(4), K=9)
        assert vote in (1, 3)

    def test_even_k_rejected(self) -> None:
        bank = self._bank(n=10)
        with pytest.raises(ExpertError):
            knn_classify(bank, (1, 3), np.zeros(4), K=4)
