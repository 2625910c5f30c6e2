"""Competence features and competence classifiers.

For a target and one base classifier, the competence vector is

    phi1: correctness bits of the classifier on the k_v visual neighbors
    phi2: correctness bits on the k_p privacy-profile neighbors
    phi3: the classifier's maximum posterior on the target itself

One logistic competence classifier per modality is trained on the estimate
set, treating each estimate record as a target whose neighborhoods are drawn
from the rest of the estimate set.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, Modality
from dmfp.errors import NeighborhoodError, TrainingError
from dmfp.linear import ConstantModel, TrainConfig, model_from_dict, train_logistic
from dmfp.neighbors import (
    Neighborhood,
    NeighborhoodConfig,
    VisualMetric,
    privacy_neighbor_indices,
    profile_matrix,
    visual_neighbor_indices,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompetenceLayout:
    """Which parts of the competence vector are used, and how.

    ``drop_nv``/``drop_np`` keep the block but fill it with zeros (the
    neighborhood is never consulted); ``use_phi*`` = False removes the block
    from the vector altogether.
    """

    use_phi1: bool = True
    use_phi2: bool = True
    use_phi3: bool = True
    drop_nv: bool = False
    drop_np: bool = False
    intersection: bool = False
    soft: bool = False

    def length(self, k_v: int, k_p: int) -> int:
        return k_v * self.use_phi1 + k_p * self.use_phi2 + int(self.use_phi3)

    def assemble(self, phi1: np.ndarray, phi2: np.ndarray, phi3: np.ndarray) -> np.ndarray:
        """Stack batch blocks (rows x k_v, rows x k_p, rows) into feature rows."""
        parts = []
        if self.use_phi1:
            parts.append(np.zeros_like(phi1) if self.drop_nv else phi1)
        if self.use_phi2:
            parts.append(np.zeros_like(phi2) if self.drop_np else phi2)
        if self.use_phi3:
            parts.append(np.asarray(phi3, dtype=np.float64)[:, None])
        if not parts:
            raise TrainingError("competence layout uses no features")
        return np.hstack(parts)


@dataclass(frozen=True, eq=False)
class CompetenceVector:
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: float
    modality: Modality

    def as_array(self, layout: CompetenceLayout = CompetenceLayout()) -> np.ndarray:
        return layout.assemble(np.asarray(self.phi1, float)[None, :],
                               np.asarray(self.phi2, float)[None, :],
                               np.array([self.phi3]))[0]

    def __len__(self) -> int:
        return len(self.phi1) + len(self.phi2) + 1


class ReferenceBank:
    """The estimate set with base-classifier outputs computed once.

    Holds, per modality, the private posterior and argmax correctness of
    every estimate record, plus their privacy profiles. Read-only after
    construction.
    """

    def __init__(self, estimate_set: LabeledDataset, base: dict, tie_to_private: bool = False):
        if len(estimate_set) == 0:
            raise NeighborhoodError("estimate set is empty")
        self.estimate_set = estimate_set
        self.base = {m: base[m] for m in MODALITIES}
        self.tie_to_private = tie_to_private
        self.profiles = profile_matrix(estimate_set, self.base)
        self.posterior = np.vstack([self.profiles[:, 2 * i] for i in range(len(MODALITIES))])
        self.predicted = predicted_bits(self.posterior, tie_to_private)
        self.correct = (self.predicted == estimate_set.labels[None, :]).astype(np.float64)

    def __len__(self) -> int:
        return len(self.estimate_set)

    def row(self, m: Modality) -> int:
        return MODALITIES.index(m)

    @cached_property
    def true_label_prob(self) -> np.ndarray:
        """Posterior each classifier assigns to the gold label (soft phi)."""
        y = self.estimate_set.labels[None, :]
        return np.where(y == 1, self.posterior, 1.0 - self.posterior)

    def target_outputs(self, targets: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
        """(posterior (3, q), profiles (q, 6)) for arbitrary targets."""
        if targets is self.estimate_set:
            return self.posterior, self.profiles
        prof = profile_matrix(targets, self.base)
        post = np.vstack([prof[:, 2 * i] for i in range(len(MODALITIES))])
        return post, prof

    def neighborhoods(self, targets: LabeledDataset, profiles: np.ndarray,
                      ncfg: NeighborhoodConfig, need_visual: bool = True,
                      need_privacy: bool = True):
        """Neighbor index matrices (-1 marks an empty slot) for each target."""
        q = len(targets)
        ids = targets.ids
        nv = np.full((q, 0), -1, dtype=np.int64)
        npi = np.full((q, 0), -1, dtype=np.int64)
        if need_visual:
            nv, _ = visual_neighbor_indices(targets.concat, ids, self.estimate_set, ncfg)
        if need_privacy:
            npi, _ = privacy_neighbor_indices(profiles, ids, self.estimate_set.ids,
                                              self.estimate_set.id_rank, self.profiles, ncfg)
        return nv, npi


def predicted_bits(posterior: np.ndarray, tie_to_private: bool = False) -> np.ndarray:
    if tie_to_private:
        return (posterior >= 0.5).astype(np.int64)
    return (posterior > 0.5).astype(np.int64)


def _gather(values: np.ndarray, idx: np.ndarray, width: int) -> np.ndarray:
    """values[idx] cut or zero-padded to ``width``; -1 slots give 0."""
    out = np.zeros((idx.shape[0], width))
    if idx.shape[1]:
        idx = idx[:, :width]
        out[:, :idx.shape[1]] = np.where(idx >= 0, values[np.maximum(idx, 0)], 0.0)
    return out


def _intersection_masks(nv: np.ndarray, npi: np.ndarray):
    m1 = np.zeros(nv.shape, dtype=bool)
    m2 = np.zeros(npi.shape, dtype=bool)
    for r in range(nv.shape[0]):
        a, b = nv[r], npi[r]
        m1[r] = np.isin(a, b[b >= 0]) & (a >= 0)
        m2[r] = np.isin(b, a[a >= 0]) & (b >= 0)
    return m1, m2


def competence_blocks(bank: ReferenceBank, nv: np.ndarray, npi: np.ndarray,
                      target_posterior: np.ndarray, ncfg: NeighborhoodConfig,
                      layout: CompetenceLayout) -> dict[Modality, tuple]:
    """Per modality, the (phi1, phi2, phi3) batch blocks for a set of targets."""
    if layout.intersection and nv.shape[1] and npi.shape[1]:
        m1, m2 = _intersection_masks(nv, npi)
        nv = np.where(m1, nv, -1)
        npi = np.where(m2, npi, -1)
    source = bank.true_label_prob if layout.soft else bank.correct
    out = {}
    for i, m in enumerate(MODALITIES):
        phi1 = _gather(source[i], nv, ncfg.k_v)
        phi2 = _gather(source[i], npi, ncfg.k_p)
        p = target_posterior[i]
        phi3 = np.maximum(p, 1.0 - p)
        out[m] = (phi1, phi2, phi3)
    return out


def competence_features(target: FeatureRecord, nv: Neighborhood, np_: Neighborhood, b,
                        estimate_set: LabeledDataset, ncfg: NeighborhoodConfig | None = None,
                        modality: Modality | None = None,
                        tie_to_private: bool = False) -> CompetenceVector:
    """Competence vector of classifier ``b`` for ``target``.

    Neighbor ids are resolved in ``estimate_set``. Blocks are zero-padded to
    ``ncfg.k_v``/``ncfg.k_p`` when given, else sized to the neighborhoods.
    """
    modality = modality or getattr(b, "modality", None)
    if modality is None:
        raise TrainingError("cannot tell which block the classifier reads; pass modality")
    if len(np_) == 0 or len(nv) == 0:
        raise NeighborhoodError("competence features need nonempty neighborhoods")
    k_v = ncfg.k_v if ncfg else len(nv)
    k_p = ncfg.k_p if ncfg else len(np_)

    def bits(hood: Neighborhood, width: int) -> np.ndarray:
        out = np.zeros(width)
        for j, rid in enumerate(hood.member_ids[:width]):
            if rid not in estimate_set.index:
                raise NeighborhoodError(f"neighbor {rid!r} not in estimate set")
            rec = estimate_set[estimate_set.index[rid]]
            if rec.label is None:
                raise NeighborhoodError(f"neighbor {rid!r} is unlabeled")
            p = float(b.proba_private(rec.block(modality)[None, :])[0])
            out[j] = float(predicted_bits(np.array(p), tie_to_private) == rec.label.bit)
        return out

    p = float(b.proba_private(target.block(modality)[None, :])[0])
    return CompetenceVector(bits(nv, k_v), bits(np_, k_p), max(p, 1.0 - p), modality)


@dataclass
class CompetenceModelSet:
    models: dict
    ncfg: NeighborhoodConfig
    layout: CompetenceLayout = field(default_factory=CompetenceLayout)

    @property
    def feature_length(self) -> int:
        return self.layout.length(self.ncfg.k_v, self.ncfg.k_p)

    def score_rows(self, m: Modality, rows: np.ndarray) -> np.ndarray:
        return self.models[m].proba(rows)

    def to_dict(self) -> dict:
        return {
            "neighbors": {"k_v": self.ncfg.k_v, "k_p": self.ncfg.k_p,
                          "visual_metric": self.ncfg.visual_metric.value,
                          "include_self": self.ncfg.include_self},
            "layout": asdict(self.layout),
            "models": {m.value: self.models[m].to_dict() for m in MODALITIES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompetenceModelSet":
        nb = d["neighbors"]
        ncfg = NeighborhoodConfig(nb["k_v"], nb["k_p"], VisualMetric(nb["visual_metric"]),
                                  nb["include_self"])
        models = {Modality(k): model_from_dict(v) for k, v in d["models"].items()}
        return cls(models, ncfg, CompetenceLayout(**d["layout"]))


def predict_competence(models: CompetenceModelSet, phi: CompetenceVector) -> float:
    x = phi.as_array(models.layout)
    if len(x) != models.feature_length:
        raise TrainingError(f"competence vector has length {len(x)}, "
                            f"model expects {models.feature_length}")
    return float(models.score_rows(phi.modality, x[None, :])[0])


def competence_training_set(bank: ReferenceBank, ncfg: NeighborhoodConfig,
                            layout: CompetenceLayout) -> dict[Modality, tuple[np.ndarray, np.ndarray]]:
    """Feature rows and correctness labels per modality over the estimate set."""
    if len(bank) < 2 and not ncfg.include_self:
        raise NeighborhoodError("estimate set needs at least 2 records: "
                                "no neighbors remain after self-exclusion")
    ds = bank.estimate_set
    need_v = layout.use_phi1 and not layout.drop_nv
    need_p = layout.use_phi2 and not layout.drop_np
    nv, npi = bank.neighborhoods(ds, bank.profiles, ncfg, need_v or layout.intersection,
                                 need_p or layout.intersection)
    blocks = competence_blocks(bank, nv, npi, bank.posterior, ncfg, layout)
    return {m: (layout.assemble(*blocks[m]), bank.correct[i].astype(np.int64))
            for i, m in enumerate(MODALITIES)}


def train_competence(estimate_set: LabeledDataset, base: dict,
                     ncfg: NeighborhoodConfig = NeighborhoodConfig(),
                     tcfg: TrainConfig = TrainConfig(),
                     layout: CompetenceLayout = CompetenceLayout(),
                     bank: ReferenceBank | None = None) -> CompetenceModelSet:
    """Fit one logistic competence classifier per base classifier."""
    if bank is None:
        bank = ReferenceBank(estimate_set, base)
    data = competence_training_set(bank, ncfg, layout)
    return fit_competence_models(data, ncfg, tcfg, layout)


def fit_competence_models(data: dict, ncfg: NeighborhoodConfig, tcfg: TrainConfig,
                          layout: CompetenceLayout) -> CompetenceModelSet:
    """Logistic model per modality from ``{modality: (rows, labels)}``."""
    models = {}
    for m, (X, y) in data.items():
        rate = float(y.mean())
        if rate in (0.0, 1.0):
            log.warning("competence labels for %s are all %d; using a constant predictor",
                        m.value, int(rate))
            models[m] = ConstantModel(rate, X.shape[1])
        else:
            models[m] = train_logistic(X, y, tcfg)
    return CompetenceModelSet(models, ncfg, layout)
