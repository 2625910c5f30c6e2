"""End-to-end training, evaluation and model persistence."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dmfp.baselines import (
    ClusterEnsemble,
    ConcatModel,
    DecisionFusion,
    MajorityVote,
    PolicySelect,
    Predictor,
    SingleModality,
    StackedEnsemble,
    train_cluster_ensemble,
    train_concat,
    train_policy_select,
    train_stacked,
)
from dmfp.competence import CompetenceModelSet, ReferenceBank, train_competence
from dmfp.config import RunConfig
from dmfp.data import MODALITIES, LabeledDataset, Modality, load_dataset, split_dataset
from dmfp.errors import NeighborhoodError
from dmfp.fusion import FusionConfig, FusionDecision, Scorer, Variant, fuse, layout_for
from dmfp.linear import (
    TrainConfig,
    classifier_from_dict,
    model_from_dict,
    train_calibrated,
)
from dmfp.metrics import AnalysisTable, EvalReport, confusion_metrics, error_correction, exploratory_analysis
from dmfp.neighbors import VisualMetric
from dmfp.synth import generate

log = logging.getLogger(__name__)


class DMFPPredictor(Predictor):
    """The fused system (or one of its ablations) as a predictor."""

    def __init__(self, bank: ReferenceBank, cmodels: CompetenceModelSet | None,
                 cfg: FusionConfig, variant: Variant = Variant.DMFP, scorer: Scorer | None = None):
        self.bank, self.cmodels, self.cfg = bank, cmodels, cfg
        self.variant, self.scorer = Variant(variant), scorer
        self.name = self.variant.value

    def decisions(self, ds: LabeledDataset) -> list[FusionDecision]:
        return fuse(ds, self.bank, self.cmodels, self.cfg, self.variant, self.scorer)

    def predict_bits(self, ds):
        return np.array([d.label.bit for d in self.decisions(ds)], dtype=np.int64)


@dataclass
class TrainedSystem:
    base: dict
    bank: ReferenceBank
    fusion: FusionConfig
    competence: dict = field(default_factory=dict)  # learned Variant -> CompetenceModelSet
    baselines: dict = field(default_factory=dict)  # name -> Predictor

    def system(self, variant: Variant = Variant.DMFP) -> DMFPPredictor:
        variant = Variant(variant)
        return DMFPPredictor(self.bank, self.competence.get(variant), self.fusion, variant)

    def predictors(self, variants=(Variant.DMFP,)) -> dict[str, Predictor]:
        out = {Variant(v).value: self.system(v) for v in variants}
        out.update(self.baselines)
        return out


def load_data(cfg: RunConfig) -> LabeledDataset:
    if cfg.data.manifest:
        return load_dataset(cfg.data.manifest)
    return generate(cfg.synth)[0]


def make_splits(cfg: RunConfig, ds: LabeledDataset | None = None):
    return split_dataset(load_data(cfg) if ds is None else ds, cfg.split)


def train_base(train_set: LabeledDataset, tcfg: TrainConfig) -> dict:
    return {m: train_calibrated(train_set.matrix(m), train_set.labels, tcfg, m) for m in MODALITIES}


def train_baselines(names, base: dict, train_set: LabeledDataset, estimate_set: LabeledDataset,
                    cfg: RunConfig) -> dict[str, Predictor]:
    bc, tcfg = cfg.baselines, cfg.train
    out = {}
    for name in names:
        if name.startswith("base_"):
            p = SingleModality(base, Modality(name[5:]))
        elif name == "majority_vote":
            p = MajorityVote(base)
        elif name.startswith("decision_fusion_"):
            p = DecisionFusion(base, name[len("decision_fusion_"):])
        elif name == "policy_select":
            p = PolicySelect(base, train_policy_select(estimate_set, base, tcfg), cfg.fusion.threshold)
        elif name == "stacked":
            p = StackedEnsemble(base, train_stacked(train_set, base, tcfg, bc.honest_stacking))
        elif name == "cluster":
            p = train_cluster_ensemble(train_set, bc.n_clusters, tcfg, bc.cluster_k, bc.linkage,
                                       cfg.neighbors.visual_metric)
        elif name == "concat":
            p = train_concat(train_set, tcfg)
        else:
            raise ValueError(f"unknown baseline {name!r}")
        out[name] = p
    return out


def train_system(train_set: LabeledDataset, estimate_set: LabeledDataset, cfg: RunConfig,
                 variants=None, baselines=None, base: dict | None = None) -> TrainedSystem:
    """Base classifiers on the training set, competence models on the estimate set."""
    if len(estimate_set) < 2 and not cfg.neighbors.include_self:
        raise NeighborhoodError("estimate set needs at least 2 records: "
                                "no neighbors remain after self-exclusion")
    variants = cfg.run.variants if variants is None else variants
    variants = tuple(dict.fromkeys((Variant.DMFP, *map(Variant, variants))))
    if base is None:
        base = train_base(train_set, cfg.train)
    bank = ReferenceBank(estimate_set, base, cfg.fusion.tie_to_private)
    layout = cfg.competence.layout()
    competence = {}
    for v in variants:
        if v.learned:
            competence[v] = train_competence(estimate_set, base, cfg.neighbors, cfg.train,
                                             layout_for(v, layout), bank=bank)
    names = cfg.baselines.names if baselines is None else baselines
    return TrainedSystem(base, bank, cfg.fusion_config(), competence,
                         train_baselines(names, base, train_set, estimate_set, cfg))


@dataclass
class Evaluation:
    reports: dict[str, EvalReport]
    exploratory: AnalysisTable
    corrections: AnalysisTable
    predictions: dict[str, np.ndarray]
    decisions: list[FusionDecision]


def evaluate_system(system: TrainedSystem, test_set: LabeledDataset, variants=(Variant.DMFP,),
                    metadata: dict | None = None) -> Evaluation:
    preds, decisions = {}, []
    for name, p in system.predictors(variants).items():
        if isinstance(p, DMFPPredictor) and p.variant is Variant.DMFP:
            decisions = p.decisions(test_set)
            preds[name] = np.array([d.label.bit for d in decisions], dtype=np.int64)
        else:
            preds[name] = p.predict_bits(test_set)
    golds = test_set.labels
    reports = {}
    for name, b in preds.items():
        meta = dict(metadata or {})
        if getattr(system.baselines.get(name), "approximation", False):
            meta["approximation"] = True
        reports[name] = confusion_metrics(b, golds, meta)
    base_preds = {m: (system.base[m].proba_private(test_set.matrix(m)) > 0.5).astype(np.int64)
                  for m in MODALITIES}
    return Evaluation(reports, exploratory_analysis(base_preds, golds),
                      error_correction(base_preds, preds[Variant.DMFP.value], golds),
                      preds, decisions)


# -- persistence ------------------------------------------------------------

def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def save_system(system: TrainedSystem, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _dump(d / "base.json", {m.value: system.base[m].to_dict() for m in MODALITIES})
    for v, cm in system.competence.items():
        _dump(d / f"competence.{v.value}.json", cm.to_dict())
    extra = {}
    for name, p in system.baselines.items():
        if isinstance(p, PolicySelect):
            extra[name] = {"policies": {m.value: p.policies[m].to_dict() for m in MODALITIES},
                           "threshold": p.threshold}
        elif isinstance(p, StackedEnsemble):
            extra[name] = {"meta": p.meta.to_dict()}
        elif isinstance(p, ClusterEnsemble):
            extra[name] = {"assignment": dict(zip(p.train_set.ids, p.assignment.tolist())),
                           "models": {str(c): m.to_dict() for c, m in p.models.items()},
                           "k": p.k, "metric": p.metric.value}
        elif isinstance(p, ConcatModel):
            extra[name] = {"model": p.clf.to_dict()}
        else:
            extra[name] = {}
    _dump(d / "baselines.json", extra)
    return d


def load_system(directory, train_set: LabeledDataset, estimate_set: LabeledDataset,
                cfg: RunConfig) -> TrainedSystem:
    """Rebuild a saved system; the splits must be the ones it was trained on."""
    d = Path(directory)
    base = {Modality(k): classifier_from_dict(v) for k, v in _load(d / "base.json").items()}
    competence = {}
    for path in sorted(d.glob("competence.*.json")):
        competence[Variant(path.name.split(".")[1])] = CompetenceModelSet.from_dict(_load(path))
    baselines = {}
    for name, e in _load(d / "baselines.json").items():
        if name == "policy_select":
            pol = {Modality(k): model_from_dict(v) for k, v in e["policies"].items()}
            baselines[name] = PolicySelect(base, pol, e["threshold"])
        elif name == "stacked":
            baselines[name] = StackedEnsemble(base, classifier_from_dict(e["meta"]))
        elif name == "cluster":
            assignment = np.array([e["assignment"][i] for i in train_set.ids], dtype=np.int64)
            models = {int(c): classifier_from_dict(m) for c, m in e["models"].items()}
            baselines[name] = ClusterEnsemble(train_set, assignment, models, e["k"],
                                              VisualMetric(e["metric"]))
        elif name == "concat":
            baselines[name] = ConcatModel(classifier_from_dict(e["model"]))
        else:
            baselines.update(train_baselines([name], base, train_set, estimate_set, cfg))
    bank = ReferenceBank(estimate_set, base, cfg.fusion.tie_to_private)
    return TrainedSystem(base, bank, cfg.fusion_config(), competence, baselines)


def decisions_jsonl(ids, decisions: list[FusionDecision], config_hash: str) -> str:
    lines = []
    for rid, dec in zip(ids, decisions):
        rec = dec.to_json(rid)
        rec["config_hash"] = config_hash
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def labels_jsonl(ids, bits, system_name: str, config_hash: str) -> str:
    lines = [json.dumps({"id": rid, "label": "private" if b else "public", "system": system_name,
                         "config_hash": config_hash}, sort_keys=True) for rid, b in zip(ids, bits)]
    return "\n".join(lines) + "\n"
