"""Dynamic fusion: agreement check, competence gating and weighted voting."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from dmfp.competence import (
    CompetenceLayout,
    CompetenceModelSet,
    ReferenceBank,
    competence_blocks,
    predicted_bits,
)
from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, Modality, PrivacyLabel
from dmfp.errors import TrainingError
from dmfp.linear import ProbabilityPair
from dmfp.neighbors import NeighborhoodConfig


class Fallback(enum.Enum):
    HIGHEST_COMPETENCE = "highest_competence"
    WEIGHTED_ALL = "weighted_all"


class DecisionPath(enum.Enum):
    UNANIMOUS = "unanimous"
    VOTED = "voted"
    FALLBACK = "fallback"
    TIE_BROKEN_BY_POSTERIOR = "tie_broken_by_posterior"


class Variant(enum.Enum):
    DMFP = "dmfp"
    NO_NV = "no_nv"
    NO_NP = "no_np"
    NO_PHI1 = "no_phi1"
    NO_PHI2 = "no_phi2"
    NO_PHI3 = "no_phi3"
    NV_CL = "nv_cl"
    NP_CL = "np_cl"
    BOTH_CL = "both_cl"

    @property
    def learned(self) -> bool:
        return self not in (Variant.NV_CL, Variant.NP_CL, Variant.BOTH_CL)


def layout_for(variant: Variant, base: CompetenceLayout = CompetenceLayout()) -> CompetenceLayout:
    """Competence layout a learned variant trains and predicts with."""
    from dataclasses import replace
    return {
        Variant.DMFP: base,
        Variant.NO_NV: replace(base, drop_nv=True),
        Variant.NO_NP: replace(base, drop_np=True),
        Variant.NO_PHI1: replace(base, use_phi1=False),
        Variant.NO_PHI2: replace(base, use_phi2=False),
        Variant.NO_PHI3: replace(base, use_phi3=False),
    }.get(variant, base)


@dataclass(frozen=True)
class FusionConfig:
    threshold: float = 0.5
    fallback: Fallback = Fallback.HIGHEST_COMPETENCE
    ncfg: NeighborhoodConfig = field(default_factory=NeighborhoodConfig)
    # False runs competence estimation even when all base classifiers agree
    short_circuit: bool = True
    tie_to_private: bool = False

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        object.__setattr__(self, "fallback", Fallback(self.fallback))


@dataclass(frozen=True)
class SelectedVote:
    modality: Modality
    score: float | None
    label: PrivacyLabel
    pair: ProbabilityPair


@dataclass(frozen=True)
class FusionDecision:
    label: PrivacyLabel
    path: DecisionPath
    selected: tuple[SelectedVote, ...]
    tallies: tuple[float, float] | None = None
    scores: Mapping[Modality, float] | None = None

    def to_json(self, target_id: str | None = None) -> dict:
        out = {}
        if target_id is not None:
            out["id"] = target_id
        out["label"] = self.label.value
        out["path"] = self.path.value
        out["selected"] = [{"modality": v.modality.value, "score": v.score,
                            "label": v.label.value} for v in self.selected]
        out["tallies"] = None if self.tallies is None else {
            "private": self.tallies[0], "public": self.tallies[1]}
        if self.scores is not None:
            out["scores"] = {m.value: s for m, s in self.scores.items()}
        return out


def weighted_majority_vote(votes):
    """Competence-weighted vote over ``(label, weight, ProbabilityPair)`` triples.

    Returns ``(label, path, (private_tally, public_tally))``. On an exact tie
    the label of the vote with the largest max-posterior wins.
    """
    votes = list(votes)
    if not votes:
        raise ValueError("cannot vote over an empty set")
    priv = pub = 0.0
    for label, weight, _ in votes:
        if weight < 0:
            raise ValueError(f"vote weights must be nonnegative, got {weight}")
        if label is PrivacyLabel.PRIVATE:
            priv += weight
        else:
            pub += weight
    if priv > pub:
        return PrivacyLabel.PRIVATE, DecisionPath.VOTED, (priv, pub)
    if pub > priv:
        return PrivacyLabel.PUBLIC, DecisionPath.VOTED, (priv, pub)
    best = max(range(len(votes)), key=lambda i: (votes[i][2].max, -i))
    return votes[best][0], DecisionPath.TIE_BROKEN_BY_POSTERIOR, (priv, pub)


def base_agreement(base, target: FeatureRecord, tie_to_private: bool = False):
    """Argmax label per modality and whether all of them agree."""
    labels = {}
    for i, m in enumerate(MODALITIES):
        clf = base[m] if isinstance(base, Mapping) else base[i]
        p = float(clf.proba_private(target.block(m)[None, :])[0])
        labels[m] = ProbabilityPair.from_private(p).label(tie_to_private)
    return labels, len(set(labels.values())) == 1


# A scorer maps (modality, phi1, phi2, phi3 batch blocks) to competence scores.
Scorer = Callable[[Modality, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def constant_scores(scores: Mapping[Modality, float]) -> Scorer:
    """Scorer that ignores the features and returns fixed per-modality scores."""
    def scorer(m, phi1, phi2, phi3):
        return np.full(len(phi3), float(scores[m]))
    return scorer


def neighbor_accuracy_scorer(variant: Variant, nv_counts: np.ndarray, np_counts: np.ndarray) -> Scorer:
    def scorer(m, phi1, phi2, phi3):
        if variant is Variant.NV_CL:
            num, den = phi1.sum(1), nv_counts
        elif variant is Variant.NP_CL:
            num, den = phi2.sum(1), np_counts
        else:
            num, den = phi1.sum(1) + phi2.sum(1), nv_counts + np_counts
        return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)
    return scorer


def _model_scorer(cmodels: CompetenceModelSet) -> Scorer:
    def scorer(m, phi1, phi2, phi3):
        return cmodels.score_rows(m, cmodels.layout.assemble(phi1, phi2, phi3))
    return scorer


def fuse(targets: LabeledDataset, bank: ReferenceBank, cmodels: CompetenceModelSet | None,
         cfg: FusionConfig = FusionConfig(), variant: Variant = Variant.DMFP,
         scorer: Scorer | None = None) -> list[FusionDecision]:
    """Fused decisions for every record of ``targets`` (batch form).

    ``scorer`` overrides how competence scores are produced; by default the
    learned competence models are used, or neighbor accuracy for the
    ``*_CL`` variants.
    """
    post, prof = bank.target_outputs(targets)
    pred = predicted_bits(post, cfg.tie_to_private)
    unanimous = np.all(pred == pred[0], axis=0)
    active = np.flatnonzero(~unanimous) if cfg.short_circuit else np.arange(len(targets))

    if variant.learned and scorer is None:
        if cmodels is None:
            raise TrainingError("learned variants need trained competence models")
        expected = layout_for(variant, CompetenceLayout(intersection=cmodels.layout.intersection,
                                                        soft=cmodels.layout.soft))
        if cmodels.layout != expected:
            raise TrainingError(f"competence models were trained with {cmodels.layout}, "
                                f"variant {variant.value} needs {expected}")
        layout, ncfg = cmodels.layout, cmodels.ncfg
        scorer = _model_scorer(cmodels)
    else:
        layout = cmodels.layout if (cmodels is not None and variant.learned) else CompetenceLayout()
        ncfg = cmodels.ncfg if (cmodels is not None and variant.learned) else cfg.ncfg

    scores = np.full((len(MODALITIES), len(targets)), np.nan)
    if len(active):
        sub = targets.subset(active) if len(active) != len(targets) else targets
        sub_prof = prof[active]
        need_v = variant is not Variant.NP_CL and not layout.drop_nv and layout.use_phi1
        need_p = variant is not Variant.NV_CL and not layout.drop_np and layout.use_phi2
        nv, npi = bank.neighborhoods(sub, sub_prof, ncfg, need_v or layout.intersection,
                                     need_p or layout.intersection)
        if not variant.learned and scorer is None:
            scorer = neighbor_accuracy_scorer(variant, (nv >= 0).sum(1), (npi >= 0).sum(1))
        blocks = competence_blocks(bank, nv, npi, post[:, active], ncfg, layout)
        for i, m in enumerate(MODALITIES):
            scores[i, active] = scorer(m, *blocks[m])

    return decide_from_scores(post, scores, cfg)


def decide_from_scores(post: np.ndarray, scores: np.ndarray,
                       cfg: FusionConfig = FusionConfig()) -> list[FusionDecision]:
    """Decisions from (3, q) private posteriors and (3, q) competence scores.

    Scores of unanimous targets are ignored when ``cfg.short_circuit`` is set.
    """
    pred = predicted_bits(post, cfg.tie_to_private)
    unanimous = np.all(pred == pred[0], axis=0)
    decisions = []
    for j in range(post.shape[1]):
        pairs = [ProbabilityPair.from_private(post[i, j]) for i in range(len(MODALITIES))]
        labels = [PrivacyLabel.from_bit(pred[i, j]) for i in range(len(MODALITIES))]
        if unanimous[j] and cfg.short_circuit:
            selected = tuple(SelectedVote(m, None, labels[i], pairs[i]) for i, m in enumerate(MODALITIES))
            decisions.append(FusionDecision(labels[0], DecisionPath.UNANIMOUS, selected))
            continue
        decisions.append(_decide(scores[:, j], labels, pairs, cfg))
    return decisions


def _decide(cs, labels, pairs, cfg: FusionConfig) -> FusionDecision:
    all_scores = {m: float(cs[i]) for i, m in enumerate(MODALITIES)}
    chosen = [i for i in range(len(MODALITIES)) if cs[i] > cfg.threshold]
    if chosen:
        votes = [(labels[i], float(cs[i]), pairs[i]) for i in chosen]
        label, path, tallies = weighted_majority_vote(votes)
    elif cfg.fallback is Fallback.HIGHEST_COMPETENCE:
        best = int(np.argmax(cs))
        chosen = [best]
        label = labels[best]
        w = float(cs[best])
        tallies = (w, 0.0) if label is PrivacyLabel.PRIVATE else (0.0, w)
        path = DecisionPath.FALLBACK
    else:
        chosen = list(range(len(MODALITIES)))
        label, _, tallies = weighted_majority_vote(
            [(labels[i], float(cs[i]), pairs[i]) for i in chosen])
        path = DecisionPath.FALLBACK
    selected = tuple(SelectedVote(MODALITIES[i], float(cs[i]), labels[i], pairs[i]) for i in chosen)
    return FusionDecision(label, path, selected, tallies, all_scores)


def _single(target: FeatureRecord, bank: ReferenceBank) -> LabeledDataset:
    return LabeledDataset((target,), bank.estimate_set.dims)


def dmfp_predict(target: FeatureRecord, bank: ReferenceBank, cmodels: CompetenceModelSet | None,
                 cfg: FusionConfig = FusionConfig(), scorer: Scorer | None = None) -> FusionDecision:
    return fuse(_single(target, bank), bank, cmodels, cfg, Variant.DMFP, scorer)[0]


def ablation_predict(variant: Variant, target: FeatureRecord, bank: ReferenceBank,
                     cmodels: CompetenceModelSet | None,
                     cfg: FusionConfig = FusionConfig()) -> FusionDecision:
    """Decision of an ablated system; learned variants need models trained
    with ``layout_for(variant)``."""
    return fuse(_single(target, bank), bank, cmodels, cfg, Variant(variant))[0]
