"""The three-modality worked example as an executable fixture.

The target's base posteriors are object 0.67, scene 0.42 and tag 0.99
(private). Seven visual and five privacy neighbors are built so each base
classifier's correctness pattern over them matches the worked example, and
competence models with zero weights emit the scores 0.97, 0.08 and 0.99.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dmfp.competence import (
    CompetenceLayout,
    CompetenceModelSet,
    CompetenceVector,
    ReferenceBank,
    competence_features,
    predict_competence,
)
from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, Modality, PrivacyLabel
from dmfp.fusion import FusionConfig, FusionDecision, dmfp_predict
from dmfp.linear import CalibratedClassifier, LinearModel, LossKind, PlattSigmoid
from dmfp.neighbors import Neighborhood, NeighborhoodConfig, NeighborhoodKind

K_V, K_P = 7, 5
TARGET_POSTERIOR = {Modality.OBJECT: 0.67, Modality.SCENE: 0.42, Modality.TAG: 0.99}
COMPETENCE = {Modality.OBJECT: 0.97, Modality.SCENE: 0.08, Modality.TAG: 0.99}
VISUAL_BITS = {
    Modality.OBJECT: (1, 1, 0, 1, 0, 1, 1),
    Modality.SCENE: (1, 0, 1, 1, 1, 1, 1),
    Modality.TAG: (0, 0, 0, 1, 0, 1, 1),
}
PRIVACY_BITS = {
    Modality.OBJECT: (1, 1, 1, 1, 1),
    Modality.SCENE: (0, 0, 0, 0, 0),
    Modality.TAG: (1, 1, 1, 1, 1),
}


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def identity_classifier(modality: Modality) -> CalibratedClassifier:
    """Reads a 1-dim block holding a logit; its private posterior is sigmoid(x)."""
    return CalibratedClassifier(((LinearModel(np.array([1.0]), 0.0, LossKind.HINGE),
                                  PlattSigmoid(-1.0, 0.0)),), modality)


def fixed_competence(scores=COMPETENCE, ncfg=NeighborhoodConfig(K_V, K_P),
                     layout: CompetenceLayout = CompetenceLayout()) -> CompetenceModelSet:
    """Zero-weight logistic models whose output is the given score."""
    n = layout.length(ncfg.k_v, ncfg.k_p)
    models = {m: LinearModel(np.zeros(n), _logit(scores[m]), LossKind.LOGISTIC) for m in MODALITIES}
    return CompetenceModelSet(models, ncfg, layout)


def _record(rid: str, posteriors: dict, label: PrivacyLabel | None) -> FeatureRecord:
    return FeatureRecord(rid, {m: np.array([_logit(posteriors[m])]) for m in MODALITIES}, label)


@dataclass
class WorkedExample:
    target: FeatureRecord
    estimate_set: LabeledDataset
    base: dict
    visual: Neighborhood
    privacy: Neighborhood
    cmodels: CompetenceModelSet
    ncfg: NeighborhoodConfig


def build_fixture() -> WorkedExample:
    records = []

    def neighbor(rid, j, bits, label):
        # the classifier is right on this neighbor iff its bit is 1
        post = {}
        for m in MODALITIES:
            right = bits[m][j] == 1
            says_private = right == (label is PrivacyLabel.PRIVATE)
            post[m] = 0.8 if says_private else 0.2
        return _record(rid, post, label)

    for j in range(K_V):
        label = PrivacyLabel.PRIVATE if j % 2 == 0 else PrivacyLabel.PUBLIC
        records.append(neighbor(f"v{j + 1}", j, VISUAL_BITS, label))
    for j in range(K_P):
        label = PrivacyLabel.PRIVATE if j % 2 == 0 else PrivacyLabel.PUBLIC
        records.append(neighbor(f"p{j + 1}", j, PRIVACY_BITS, label))
    estimate = LabeledDataset(tuple(records), {m: 1 for m in MODALITIES})
    target = _record("target", TARGET_POSTERIOR, PrivacyLabel.PRIVATE)
    base = {m: identity_classifier(m) for m in MODALITIES}

    def hood(kind, ids):
        return Neighborhood(kind, tuple(ids), tuple(1.0 - 0.01 * j for j in range(len(ids))),
                            tuple(estimate.index[i] for i in ids))

    visual = hood(NeighborhoodKind.VISUAL, [f"v{j + 1}" for j in range(K_V)])
    privacy = hood(NeighborhoodKind.PRIVACY, [f"p{j + 1}" for j in range(K_P)])
    ncfg = NeighborhoodConfig(K_V, K_P)
    return WorkedExample(target, estimate, base, visual, privacy, fixed_competence(ncfg=ncfg), ncfg)


def fixture_vectors(fx: WorkedExample) -> dict[Modality, CompetenceVector]:
    return {m: competence_features(fx.target, fx.visual, fx.privacy, fx.base[m], fx.estimate_set,
                                   fx.ncfg, m) for m in MODALITIES}


def _num(x: float) -> str:
    return f"{round(x, 2):g}"


def reproduce() -> tuple[FusionDecision, str]:
    """Run the worked example end to end and describe each step."""
    fx = build_fixture()
    bank = ReferenceBank(fx.estimate_set, fx.base)
    vectors = fixture_vectors(fx)
    decision = dmfp_predict(fx.target, bank, fx.cmodels, FusionConfig(ncfg=fx.ncfg))

    lines = [f"Worked example: k_v = {K_V}, k_p = {K_P}"]
    for m in MODALITIES:
        p = TARGET_POSTERIOR[m]
        label = PrivacyLabel.PRIVATE if p > 0.5 else PrivacyLabel.PUBLIC
        lines.append(f"  {m.value:<6} posterior (private {p:.2f}, public {1 - p:.2f}) -> {label.value}")
    lines.append("Competence features:")
    for m, v in vectors.items():
        lines.append(f"  {m.value:<6} phi1={v.phi1.astype(int).tolist()} "
                     f"phi2={v.phi2.astype(int).tolist()} phi3={v.phi3:.2f}")
    lines.append("Competence scores:")
    chosen = {v.modality for v in decision.selected}
    for m in MODALITIES:
        cs = predict_competence(fx.cmodels, vectors[m])
        lines.append(f"  {m.value:<6} {cs:.2f}" + ("  selected" if m in chosen else ""))
    priv, pub = decision.tallies
    lines.append(f"Private: {_num(priv)}, Public: {_num(pub)} → {decision.label.value.capitalize()}")
    return decision, "\n".join(lines) + "\n"
