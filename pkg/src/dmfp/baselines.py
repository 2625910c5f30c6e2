"""Comparison systems behind one predictor interface.

Every predictor maps a dataset of targets to label bits (1 = private) via
``predict_bits``; ``predict`` handles a single record.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, Modality, PrivacyLabel
from dmfp.errors import TrainingError
from dmfp.fusion import weighted_majority_vote
from dmfp.linear import (
    ConstantClassifier,
    ConstantModel,
    ProbabilityPair,
    TrainConfig,
    stratified_folds,
    train_calibrated,
    train_logistic,
)
from dmfp.neighbors import NeighborhoodConfig, VisualMetric, profile_matrix, visual_neighbor_indices

log = logging.getLogger(__name__)


class DecisionFusionMode(enum.Enum):
    AVERAGE = "average"
    MAX_CONFIDENCE = "max_confidence"


def base_posteriors(base: dict, ds: LabeledDataset) -> np.ndarray:
    """(3, n) private posteriors, rows in modality order."""
    return np.vstack([base[m].proba_private(ds.matrix(m)) for m in MODALITIES])


def _bits(post: np.ndarray) -> np.ndarray:
    return (post > 0.5).astype(np.int64)


class Predictor:
    name = "predictor"

    def predict_bits(self, ds: LabeledDataset) -> np.ndarray:
        raise NotImplementedError

    def predict_many(self, ds: LabeledDataset) -> list[PrivacyLabel]:
        return [PrivacyLabel.from_bit(b) for b in self.predict_bits(ds)]

    def predict(self, rec: FeatureRecord) -> PrivacyLabel:
        dims = {m: len(v) for m, v in rec.blocks.items()}
        return self.predict_many(LabeledDataset((rec,), dims))[0]


class SingleModality(Predictor):
    def __init__(self, base: dict, modality: Modality):
        self.base, self.modality = base, modality
        self.name = f"base_{modality.value}"

    def predict_bits(self, ds):
        return _bits(self.base[self.modality].proba_private(ds.matrix(self.modality)))


class MajorityVote(Predictor):
    name = "majority_vote"

    def __init__(self, base: dict):
        self.base = base

    def predict_bits(self, ds):
        return (_bits(base_posteriors(self.base, ds)).sum(0) * 2 > len(MODALITIES)).astype(np.int64)


class DecisionFusion(Predictor):
    def __init__(self, base: dict, mode: DecisionFusionMode = DecisionFusionMode.AVERAGE):
        self.base, self.mode = base, DecisionFusionMode(mode)
        self.name = f"decision_fusion_{self.mode.value}"

    def predict_bits(self, ds):
        post = base_posteriors(self.base, ds)
        if self.mode is DecisionFusionMode.AVERAGE:
            return _bits(post.mean(0))
        conf = np.maximum(post, 1.0 - post)
        pick = np.argmax(conf, axis=0)
        return _bits(post[pick, np.arange(post.shape[1])])


class PolicySelect(Predictor):
    """Per-modality selection policies over the privacy profile, then a vote."""

    name = "policy_select"

    def __init__(self, base: dict, policies: dict, threshold: float = 0.5):
        self.base, self.policies, self.threshold = base, policies, threshold

    def predict_bits(self, ds):
        prof = profile_matrix(ds, self.base)
        post = prof[:, 0::2].T
        chosen = np.vstack([self.policies[m].proba(prof) > self.threshold for m in MODALITIES])
        out = np.empty(len(ds), dtype=np.int64)
        for j in range(len(ds)):
            idx = np.flatnonzero(chosen[:, j])
            if len(idx) == 0:
                idx = np.arange(len(MODALITIES))
            votes = [(PrivacyLabel.from_bit(post[i, j] > 0.5), 1.0,
                      ProbabilityPair.from_private(post[i, j])) for i in idx]
            out[j] = weighted_majority_vote(votes)[0].bit
        return out


class StackedEnsemble(Predictor):
    name = "stacked"

    def __init__(self, base: dict, meta):
        self.base, self.meta = base, meta

    def predict_bits(self, ds):
        return _bits(self.meta.proba_private(profile_matrix(ds, self.base)))


class ConcatModel(Predictor):
    """One calibrated linear model over concatenated blocks.

    Approximates the feature-concatenation prior work; no CNN fine-tuning.
    """

    name = "concat"
    approximation = True

    def __init__(self, clf):
        self.clf = clf

    def predict_bits(self, ds):
        return _bits(self.clf.proba_private(ds.concat))


@dataclass
class ClusterEnsemble(Predictor):
    train_set: LabeledDataset
    assignment: np.ndarray
    models: dict
    k: int = 15
    metric: VisualMetric = VisualMetric.COSINE
    name = "cluster"

    def select_clusters(self, ds: LabeledDataset) -> np.ndarray:
        ncfg = NeighborhoodConfig(k_v=self.k, k_p=1, visual_metric=self.metric)
        idx, _ = visual_neighbor_indices(ds.concat, ds.ids, self.train_set, ncfg)
        out = np.empty(len(ds), dtype=np.int64)
        for j, row in enumerate(idx):
            members = self.assignment[row[row >= 0]]
            out[j] = majority_cluster(members)
        return out

    def predict_bits(self, ds):
        cl = self.select_clusters(ds)
        out = np.empty(len(ds), dtype=np.int64)
        X = ds.concat
        for c in np.unique(cl):
            rows = np.flatnonzero(cl == c)
            out[rows] = _bits(self.models[int(c)].proba_private(X[rows]))
        return out


def majority_cluster(members) -> int:
    """Most frequent cluster id; ties go to the one whose first member ranks highest."""
    members = [int(c) for c in members]
    if not members:
        raise TrainingError("no neighbors to choose a cluster from")
    counts = {}
    for c in members:
        counts[c] = counts.get(c, 0) + 1
    top = max(counts.values())
    return next(c for c in members if counts[c] == top)


# -- operation-level entry points -------------------------------------------

def majority_vote_predict(base: dict, target: FeatureRecord) -> PrivacyLabel:
    return MajorityVote(base).predict(target)


def decision_fusion_predict(base: dict, target: FeatureRecord,
                            mode: DecisionFusionMode = DecisionFusionMode.AVERAGE) -> PrivacyLabel:
    return DecisionFusion(base, mode).predict(target)


def train_policy_select(estimate_set: LabeledDataset, base: dict,
                        tcfg: TrainConfig = TrainConfig()) -> dict:
    """One logistic policy per modality: does this base classifier get the record right?"""
    prof = profile_matrix(estimate_set, base)
    y = estimate_set.labels
    policies = {}
    for i, m in enumerate(MODALITIES):
        correct = ((prof[:, 2 * i] > 0.5).astype(np.int64) == y).astype(np.int64)
        rate = float(correct.mean())
        if rate in (0.0, 1.0):
            log.warning("policy labels for %s are constant; using a constant policy", m.value)
            policies[m] = ConstantModel(rate, prof.shape[1])
        else:
            policies[m] = train_logistic(prof, correct, tcfg)
    return policies


def policy_select_predict(base: dict, policies: dict, target: FeatureRecord) -> PrivacyLabel:
    return PolicySelect(base, policies).predict(target)


def _encode_out_of_fold(train_set: LabeledDataset, tcfg: TrainConfig) -> np.ndarray:
    y = train_set.labels
    fold = stratified_folds(y, tcfg.folds, tcfg.seed + 101)
    enc = np.empty((len(train_set), 2 * len(MODALITIES)))
    for k in range(tcfg.folds):
        held = np.flatnonzero(fold == k)
        rest = train_set.subset(np.flatnonzero(fold != k))
        base_k = {m: train_calibrated(rest.matrix(m), rest.labels, tcfg, m) for m in MODALITIES}
        enc[held] = profile_matrix(train_set.subset(held), base_k)
    return enc


def train_stacked(train_set: LabeledDataset, base: dict, tcfg: TrainConfig = TrainConfig(),
                  honest: bool = False):
    """Meta-classifier over privacy profiles of the base-training set.

    By default the encodings come from the same base classifiers that were
    trained on ``train_set``; ``honest`` uses out-of-fold encodings instead.
    """
    enc = _encode_out_of_fold(train_set, tcfg) if honest else profile_matrix(train_set, base)
    return train_calibrated(enc, train_set.labels, tcfg)


def stacked_predict(base: dict, meta, target: FeatureRecord) -> PrivacyLabel:
    return StackedEnsemble(base, meta).predict(target)


def train_cluster_ensemble(train_set: LabeledDataset, n_clusters: int = 5,
                           tcfg: TrainConfig = TrainConfig(), k: int = 15,
                           method: str = "ward",
                           metric: VisualMetric = VisualMetric.COSINE) -> ClusterEnsemble:
    """Agglomerative clustering of the concatenated features, one model per cluster."""
    n = len(train_set)
    if n_clusters >= n:
        raise TrainingError(f"{n_clusters} clusters for {n} records leaves single-record, "
                            "single-class clusters")
    if n_clusters < 1:
        raise TrainingError("n_clusters must be positive")
    X = train_set.concat
    Z = linkage(X, method=method)
    assignment = fcluster(Z, t=n_clusters, criterion="maxclust").astype(np.int64)
    y = train_set.labels
    models = {}
    for c in np.unique(assignment):
        rows = np.flatnonzero(assignment == c)
        yc = y[rows]
        n_pos = int(yc.sum())
        if min(n_pos, len(rows) - n_pos) < tcfg.folds:
            rate = n_pos / len(rows)
            log.warning("cluster %d has %d private / %d public records; using a constant "
                        "predictor at rate %.3f", c, n_pos, len(rows) - n_pos, rate)
            models[int(c)] = ConstantClassifier(rate, X.shape[1])
        else:
            models[int(c)] = train_calibrated(X[rows], yc, tcfg)
    return ClusterEnsemble(train_set, assignment, models, k, VisualMetric(metric))


def cluster_predict(ensemble: ClusterEnsemble, target: FeatureRecord) -> PrivacyLabel:
    return ensemble.predict(target)


def train_concat(train_set: LabeledDataset, tcfg: TrainConfig = TrainConfig()) -> ConcatModel:
    return ConcatModel(train_calibrated(train_set.concat, train_set.labels, tcfg))
