import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from worlds import logit, reading_classifier
from dmfp.baselines import (
    DecisionFusion,
    DecisionFusionMode,
    MajorityVote,
    PolicySelect,
    SingleModality,
    StackedEnsemble,
    cluster_predict,
    decision_fusion_predict,
    majority_cluster,
    majority_vote_predict,
    policy_select_predict,
    stacked_predict,
    train_cluster_ensemble,
    train_concat,
    train_policy_select,
    train_stacked,
)
from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, PrivacyLabel
from dmfp.errors import TrainingError
from dmfp.linear import ConstantClassifier, ConstantModel, TrainConfig
from dmfp.neighbors import profile_matrix

O, S, T = MODALITIES
PRIV, PUB = PrivacyLabel.PRIVATE, PrivacyLabel.PUBLIC


def _const_base(*ps):
    return {m: ConstantClassifier(p, 1) for m, p in zip(MODALITIES, ps)}


REC = FeatureRecord("x", {m: [0.0] for m in MODALITIES})


def test_majority_vote_examples():
    assert majority_vote_predict(_const_base(0.8, 0.7, 0.2), REC) is PRIV
    assert majority_vote_predict(_const_base(0.1, 0.3, 0.2), REC) is PUB


def test_decision_fusion_examples():
    base = _const_base(0.6, 0.55, 0.2)
    assert decision_fusion_predict(base, REC, DecisionFusionMode.AVERAGE) is PUB
    assert decision_fusion_predict(base, REC, DecisionFusionMode.MAX_CONFIDENCE) is PUB
    same = _const_base(0.7, 0.7, 0.7)
    for mode in DecisionFusionMode:
        assert decision_fusion_predict(same, REC, mode) is SingleModality(same, O).predict(REC)


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.permutations(range(3)))
def test_average_fusion_permutation_invariant(ps, perm):
    a = decision_fusion_predict(_const_base(*ps), REC)
    b = decision_fusion_predict(_const_base(*[ps[i] for i in perm]), REC)
    mean = np.mean(ps)
    if abs(mean - 0.5) > 1e-12:
        assert a is b


def _world(n, seed, rule, margin=0.0):
    """Records with random per-modality posteriors and labels from ``rule``.

    Posteriors stay at least ``margin`` away from 0.5.
    """
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n):
        p = rng.uniform(0.02, 0.98, 3)
        p = np.where(p > 0.5, np.maximum(p, 0.5 + margin), np.minimum(p, 0.5 - margin))
        recs.append(FeatureRecord(f"r{i:04d}", {m: np.array([logit(q), 0.0]) for m, q in zip(MODALITIES, p)},
                                  PrivacyLabel.from_bit(rule(p))))
    return LabeledDataset(tuple(recs), {m: 2 for m in MODALITIES})


BASE = {m: reading_classifier(m) for m in MODALITIES}


def test_policy_all_pass_equals_majority(small_world):
    base = small_world["base"]
    always = {m: ConstantModel(1.0, 6) for m in MODALITIES}
    test = small_world["test"]
    np.testing.assert_array_equal(PolicySelect(base, always).predict_bits(test),
                                  MajorityVote(base).predict_bits(test))
    never = {m: ConstantModel(0.0, 6) for m in MODALITIES}
    np.testing.assert_array_equal(PolicySelect(base, never).predict_bits(test),
                                  MajorityVote(base).predict_bits(test))


def test_policy_learns_profile_rule():
    # the object classifier is right exactly when the scene posterior leans private
    def rule(p):
        obj = p[0] > 0.5
        return obj if p[1] > 0.5 else not obj
    est = _world(800, 1, rule)
    held = _world(400, 2, rule)
    pol = train_policy_select(est, BASE, TrainConfig(epochs=100))
    prof = profile_matrix(held, BASE)
    right = ((prof[:, 0] > 0.5).astype(int) == held.labels)
    assert np.mean((pol[O].proba(prof) > 0.5) == right) >= 0.9
    again = train_policy_select(est, BASE, TrainConfig(epochs=100))
    assert again[O].to_dict() == pol[O].to_dict()
    assert policy_select_predict(BASE, pol, held[0]) in (PRIV, PUB)


def test_stacked_on_informative_profiles():
    train = _world(300, 3, lambda p: p[2] > 0.5, margin=0.2)
    test = _world(200, 4, lambda p: p[2] > 0.5, margin=0.2)
    meta = train_stacked(train, BASE)
    assert np.mean(StackedEnsemble(BASE, meta).predict_bits(test) == test.labels) == 1.0
    assert stacked_predict(BASE, meta, test[0]) is PrivacyLabel.from_bit(test.labels[0])


def test_stacked_constant_profiles_predict_prior():
    rng = np.random.default_rng(0)
    recs = [FeatureRecord(f"r{i}", {m: np.array([0.3, 0.0]) for m in MODALITIES},
                          PrivacyLabel.from_bit(rng.random() < 0.25)) for i in range(80)]
    train = LabeledDataset(tuple(recs))
    meta = train_stacked(train, BASE)
    p = meta.proba_private(profile_matrix(train, BASE))
    assert np.allclose(p, p[0]) and abs(p[0] - train.labels.mean()) < 0.05


def test_honest_stacking(small_world):
    meta = train_stacked(small_world["train"], small_world["base"], honest=True)
    acc = np.mean(StackedEnsemble(small_world["base"], meta).predict_bits(small_world["test"])
                  == small_world["test"].labels)
    assert acc > 0.7


def _blobs(n, seed, prefix="b"):
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n):
        blob = i % 2
        center = np.array([10.0, 0.0]) if blob == 0 else np.array([0.0, 10.0])
        x = center + rng.standard_normal(2)
        # blob 0: label follows the sign of the noise on axis 1; blob 1 the opposite
        noise = rng.standard_normal()
        label = (noise > 0) if blob == 0 else (noise < 0)
        blocks = {O: x, S: np.array([noise, 1.0]), T: np.array([1.0, 1.0])}
        recs.append(FeatureRecord(f"{prefix}{i:04d}", blocks, PrivacyLabel.from_bit(label)))
    return LabeledDataset(tuple(recs))


def test_cluster_two_blobs():
    train = _blobs(200, 0)
    ens = train_cluster_ensemble(train, n_clusters=2, k=15)
    blob = np.arange(200) % 2
    for b in (0, 1):
        assert len(set(ens.assignment[blob == b])) == 1
    assert len(set(ens.assignment)) == 2
    test = _blobs(100, 1, prefix="t")
    chosen = ens.select_clusters(test)
    tb = np.arange(100) % 2
    for b in (0, 1):
        assert set(chosen[tb == b]) == set(ens.assignment[blob == b])
    # per-cluster models capture opposite rules, a single model could not
    assert np.mean(ens.predict_bits(test) == test.labels) > 0.9
    assert cluster_predict(ens, test[0]) is PrivacyLabel.from_bit(test.labels[0])


def test_cluster_degenerate_guard():
    train = _blobs(10, 0)
    with pytest.raises(TrainingError):
        train_cluster_ensemble(train, n_clusters=10)


def test_single_class_cluster_gets_constant(caplog):
    recs = [FeatureRecord(f"a{i}", {O: np.array([10.0, 0.0]) + 0.01 * i, S: [1.0], T: [1.0]}, PUB)
            for i in range(20)]
    recs += [FeatureRecord(f"b{i}", {O: np.array([0.0, 10.0]) + 0.01 * i, S: [float(i % 2)], T: [1.0]},
                           PrivacyLabel.from_bit(i % 2)) for i in range(20)]
    with caplog.at_level(logging.WARNING):
        ens = train_cluster_ensemble(LabeledDataset(tuple(recs)), n_clusters=2)
    assert any(isinstance(m, ConstantClassifier) for m in ens.models.values())
    assert "constant" in caplog.text


def test_majority_cluster_rule():
    members = [2] * 8 + [1] * 4 + [3] * 3
    assert majority_cluster(np.random.default_rng(0).permutation(members)) == 2
    assert majority_cluster([1, 2, 2, 1]) == 1
    with pytest.raises(TrainingError):
        majority_cluster([])


def test_uniform_predictor_contract(small_world):
    base, test = small_world["base"], small_world["test"]
    preds = [SingleModality(base, O), MajorityVote(base), DecisionFusion(base, "max_confidence"),
             train_concat(small_world["train"])]
    for p in preds:
        bits = p.predict_bits(test)
        assert bits.shape == (len(test),)
        assert [p.predict(r).bit for r in list(test)[:5]] == bits[:5].tolist()
    assert preds[-1].approximation
