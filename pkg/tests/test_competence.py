import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_dataset
from worlds import region_world
from dmfp.competence import (
    CompetenceLayout,
    CompetenceModelSet,
    CompetenceVector,
    ReferenceBank,
    competence_blocks,
    competence_features,
    predict_competence,
    train_competence,
)
from dmfp.data import MODALITIES, FeatureRecord, PrivacyLabel
from dmfp.errors import NeighborhoodError, TrainingError
from dmfp.linear import CalibratedClassifier, ConstantModel, LinearModel, LossKind, PlattSigmoid, TrainConfig
from dmfp.neighbors import Neighborhood, NeighborhoodConfig, NeighborhoodKind
from dmfp.walkthrough import build_fixture, fixture_vectors

O, S, T = MODALITIES


def test_worked_example_object_vector():
    fx = build_fixture()
    v = fixture_vectors(fx)[O]
    assert v.phi1.tolist() == [1, 1, 0, 1, 0, 1, 1]
    assert v.phi2.tolist() == [1, 1, 1, 1, 1]
    assert v.phi3 == pytest.approx(0.67, abs=1e-12)
    assert len(v) == 7 + 5 + 1


def test_all_correct_with_flat_posterior():
    fx = build_fixture()
    flat = FeatureRecord("flat", {m: np.array([0.0]) for m in MODALITIES}, PrivacyLabel.PUBLIC)
    # the tag classifier is right on v4, v6, v7 and all privacy neighbors
    ids = ("v4", "v6", "v7")
    nv = Neighborhood(NeighborhoodKind.VISUAL, ids, (1.0,) * 3, tuple(fx.estimate_set.index[i] for i in ids))
    v = competence_features(flat, nv, fx.privacy, fx.base[T], fx.estimate_set, NeighborhoodConfig(3, 5), T)
    assert v.phi1.tolist() == [1, 1, 1] and v.phi2.tolist() == [1] * 5
    assert v.phi3 == 0.5


def test_padding_and_empty():
    fx = build_fixture()
    ids = fx.privacy.member_ids[:3]
    small = Neighborhood(NeighborhoodKind.PRIVACY, ids, (1.0,) * 3, fx.privacy.indices[:3])
    v = competence_features(fx.target, fx.visual, small, fx.base[O], fx.estimate_set, NeighborhoodConfig(7, 5), O)
    assert v.phi2.tolist() == [1, 1, 1, 0, 0]
    assert len(v) == 13
    empty = Neighborhood(NeighborhoodKind.PRIVACY, (), (), ())
    with pytest.raises(NeighborhoodError):
        competence_features(fx.target, fx.visual, empty, fx.base[O], fx.estimate_set, NeighborhoodConfig(7, 5), O)


def test_unknown_neighbor():
    fx = build_fixture()
    bad = Neighborhood(NeighborhoodKind.VISUAL, ("nope",), (1.0,), (0,))
    with pytest.raises(NeighborhoodError, match="not in estimate set"):
        competence_features(fx.target, bad, fx.privacy, fx.base[O], fx.estimate_set, NeighborhoodConfig(7, 5), O)


def test_cached_features_match_recomputation(small_world):
    """Batch features from the memoized bank equal per-record recomputation."""
    est, base = small_world["estimate"], small_world["base"]
    bank = ReferenceBank(est, base)
    ncfg = NeighborhoodConfig(20, 8)
    targets = small_world["test"].subset(range(25))
    post, prof = bank.target_outputs(targets)
    nv, npi = bank.neighborhoods(targets, prof, ncfg)
    blocks = competence_blocks(bank, nv, npi, post, ncfg, CompetenceLayout())
    for j, rec in enumerate(targets):
        hv = Neighborhood(NeighborhoodKind.VISUAL, tuple(est.ids[i] for i in nv[j]), (0.0,) * 20, tuple(nv[j]))
        hp = Neighborhood(NeighborhoodKind.PRIVACY, tuple(est.ids[i] for i in npi[j]), (0.0,) * 8, tuple(npi[j]))
        for i, m in enumerate(MODALITIES):
            v = competence_features(rec, hv, hp, base[m], est, ncfg, m)
            np.testing.assert_array_equal(v.phi1, blocks[m][0][j])
            np.testing.assert_array_equal(v.phi2, blocks[m][1][j])
            assert v.phi3 == pytest.approx(blocks[m][2][j], abs=1e-15)


def test_competence_learns_regions():
    est, base, _ = region_world(600, seed=1)
    held, _, region = region_world(300, seed=2, prefix="h")
    ncfg = NeighborhoodConfig(15, 5)
    cm = train_competence(est, base, ncfg, TrainConfig())
    bank = ReferenceBank(est, base)
    post, prof = bank.target_outputs(held)
    nv, npi = bank.neighborhoods(held, prof, ncfg)
    phi1, phi2, phi3 = competence_blocks(bank, nv, npi, post, ncfg, cm.layout)[O]
    scores = cm.score_rows(O, cm.layout.assemble(phi1, phi2, phi3))
    correct = ((post[0] > 0.5).astype(int) == held.labels)
    assert np.mean((scores > 0.5) == correct) >= 0.9
    # monotone in the visual evidence: all-ones phi1 beats all-zeros
    ones = cm.layout.assemble(np.ones_like(phi1[:1]), phi2[:1], phi3[:1])
    zeros = cm.layout.assemble(np.zeros_like(phi1[:1]), phi2[:1], phi3[:1])
    assert cm.score_rows(O, ones)[0] >= cm.score_rows(O, zeros)[0]


def test_more_visual_evidence_scores_higher():
    est, base, _ = region_world(600, seed=1)
    cm = train_competence(est, base, NeighborhoodConfig(15, 5), TrainConfig())
    rng = np.random.default_rng(0)
    for _ in range(200):
        fewer = (rng.random(15) < 0.3).astype(float)
        more = np.maximum(fewer, (rng.random(15) < 0.5).astype(float))
        phi2, phi3 = rng.integers(0, 2, 5).astype(float), rng.uniform(0.5, 1)
        a = predict_competence(cm, CompetenceVector(more, phi2, phi3, O))
        b = predict_competence(cm, CompetenceVector(fewer, phi2, phi3, O))
        assert a >= b - 1e-3


def test_single_record_estimate_set():
    ds, base, _ = region_world(1)
    with pytest.raises(NeighborhoodError, match="at least 2"):
        train_competence(ds, base, NeighborhoodConfig(3, 3))


def test_degenerate_labels_give_constant_model(caplog):
    est, base, _ = region_world(60, right_rate=(1.0, 1.0))
    with caplog.at_level(logging.WARNING):
        cm = train_competence(est, base, NeighborhoodConfig(5, 5))
    assert isinstance(cm.models[O], ConstantModel) and cm.models[O].rate == 1.0
    assert "constant" in caplog.text


def test_zero_weight_model_and_length_check():
    ncfg = NeighborhoodConfig(3, 2)
    models = {m: LinearModel(np.zeros(6), 0.0, LossKind.LOGISTIC) for m in MODALITIES}
    cm = CompetenceModelSet(models, ncfg)
    v = CompetenceVector(np.ones(3), np.zeros(2), 0.8, S)
    assert predict_competence(cm, v) == 0.5
    with pytest.raises(TrainingError, match="length"):
        predict_competence(cm, CompetenceVector(np.ones(4), np.zeros(2), 0.8, S))
    no3 = CompetenceModelSet({m: LinearModel(np.zeros(5), 0.0, LossKind.LOGISTIC) for m in MODALITIES},
                             ncfg, CompetenceLayout(use_phi3=False))
    assert predict_competence(no3, v) == 0.5


def test_intersection_mode_zeroes_unshared():
    fx = build_fixture()
    bank = ReferenceBank(fx.estimate_set, fx.base)
    idx = fx.estimate_set.index
    nv = np.array([[idx["v1"], idx["v2"], idx["p1"]]])
    npi = np.array([[idx["p1"], idx["v2"], idx["p2"]]])
    post = np.array([[0.9], [0.9], [0.9]])
    ncfg = NeighborhoodConfig(3, 3)
    full = competence_blocks(bank, nv, npi, post, ncfg, CompetenceLayout())
    inter = competence_blocks(bank, nv, npi, post, ncfg, CompetenceLayout(intersection=True))
    for m in MODALITIES:
        keep1 = np.array([0, 1, 1])
        keep2 = np.array([1, 1, 0])
        np.testing.assert_array_equal(inter[m][0][0], full[m][0][0] * keep1)
        np.testing.assert_array_equal(inter[m][1][0], full[m][1][0] * keep2)


def test_serialization_and_determinism(small_world):
    est, base = small_world["estimate"], small_world["base"]
    a = train_competence(est, base, NeighborhoodConfig(10, 5))
    b = train_competence(est, base, NeighborhoodConfig(10, 5))
    assert a.to_dict() == b.to_dict()
    back = CompetenceModelSet.from_dict(a.to_dict())
    assert back.to_dict() == a.to_dict() and back.layout == a.layout


def competence_invariant_violations(seed, n_targets):
    """Count violated invariants over random worlds; returns (cases, violations)."""
    rng = np.random.default_rng(seed)
    n_ref = int(rng.integers(2, 80))
    k_v, k_p = int(rng.integers(1, 100)), int(rng.integers(1, 100))
    ref = random_dataset(n_ref, seed=seed)
    targets = random_dataset(n_targets, seed=seed + 1, prefix="t")
    base = {}
    for m in MODALITIES:
        d = ref.dims[m]
        model = LinearModel(rng.standard_normal(d), float(rng.standard_normal()), LossKind.HINGE)
        base[m] = CalibratedClassifier(((model, PlattSigmoid(-abs(rng.standard_normal()) * 3, 0.0)),), m)
    bank = ReferenceBank(ref, base)
    ncfg = NeighborhoodConfig(k_v, k_p)
    layout = CompetenceLayout()
    post, prof = bank.target_outputs(targets)
    nv, npi = bank.neighborhoods(targets, prof, ncfg)
    blocks = competence_blocks(bank, nv, npi, post, ncfg, layout)
    bad = 0
    bad += int(np.sum(np.abs(prof[:, 0::2] + prof[:, 1::2] - 1.0) > 1e-9))
    for m in MODALITIES:
        phi1, phi2, phi3 = blocks[m]
        rows = layout.assemble(phi1, phi2, phi3)
        bad += int(rows.shape[1] != k_v + k_p + 1)
        bad += int(np.sum(~np.isin(phi1, (0.0, 1.0)))) + int(np.sum(~np.isin(phi2, (0.0, 1.0))))
        bad += int(np.sum((phi3 < 0.5) | (phi3 > 1.0)))
    return n_targets * len(MODALITIES), bad


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_competence_invariants(seed):
    _, bad = competence_invariant_violations(seed, 20)
    assert bad == 0
