"""Neighborhood-size sweep and repeated-split runs."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from dmfp.competence import ReferenceBank, competence_blocks, fit_competence_models
from dmfp.config import RunConfig
from dmfp.data import MODALITIES, LabeledDataset
from dmfp.fusion import decide_from_scores
from dmfp.linear import stratified_folds
from dmfp.metrics import EvalReport, confusion_metrics, paired_t_test
from dmfp.neighbors import NeighborhoodConfig
from dmfp.pipeline import evaluate_system, load_data, make_splits, train_base, train_system


@dataclass
class SweepResult:
    k_v: tuple[int, ...]
    k_p: tuple[int, ...]
    f1: np.ndarray  # (len(k_v), len(k_p)) private-class F1
    config_hash: str = ""

    @property
    def best(self) -> tuple[int, int, float]:
        """Best cell; ties go to the first in row-major order."""
        i, j = np.unravel_index(int(np.argmax(self.f1)), self.f1.shape)
        return self.k_v[i], self.k_p[j], float(self.f1[i, j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.config_hash:
            buf.write(f"# config_hash={self.config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k_v\\k_p", *self.k_p])
        for kv, row in zip(self.k_v, self.f1):
            w.writerow([kv, *(f"{v:.6f}" for v in row)])
        return buf.getvalue()


def sweep(estimate_set: LabeledDataset, base: dict, cfg: RunConfig, k_v=None, k_p=None,
          folds: int | None = None) -> SweepResult:
    """Private-class F1 of the fused system for every (k_v, k_p) cell.

    Cross-validation runs inside the estimate set: each fold in turn is
    held out as targets while the rest serves as reference set and
    competence training data. Predictions of all folds are pooled before
    scoring. Neighbor lists are ranked once at the largest k and cut per
    cell, which gives the same lists as ranking at each k.
    """
    k_v = tuple(cfg.sweep.k_v if k_v is None else k_v)
    k_p = tuple(cfg.sweep.k_p if k_p is None else k_p)
    folds = cfg.sweep.folds if folds is None else folds
    layout = cfg.competence.layout()
    fcfg = cfg.fusion_config()
    y = estimate_set.labels
    fold = stratified_folds(y, folds, cfg.train.seed)
    widest = NeighborhoodConfig(max(k_v), max(k_p), cfg.neighbors.visual_metric,
                                cfg.neighbors.include_self)

    prepared = []
    for f in range(folds):
        held_idx = np.flatnonzero(fold == f)
        ref = estimate_set.subset(np.flatnonzero(fold != f))
        held = estimate_set.subset(held_idx)
        bank = ReferenceBank(ref, base, cfg.fusion.tie_to_private)
        nv_ref, np_ref = bank.neighborhoods(ref, bank.profiles, widest)
        post, prof = bank.target_outputs(held)
        nv_h, np_h = bank.neighborhoods(held, prof, widest)
        prepared.append((held_idx, bank, nv_ref, np_ref, post, nv_h, np_h))

    grid = np.zeros((len(k_v), len(k_p)))
    for a, kv in enumerate(k_v):
        for b, kp in enumerate(k_p):
            ncfg = NeighborhoodConfig(kv, kp, cfg.neighbors.visual_metric, cfg.neighbors.include_self)
            pred = np.empty(len(estimate_set), dtype=np.int64)
            for held_idx, bank, nv_ref, np_ref, post, nv_h, np_h in prepared:
                blocks = competence_blocks(bank, nv_ref[:, :kv], np_ref[:, :kp], bank.posterior,
                                           ncfg, layout)
                data = {m: (layout.assemble(*blocks[m]), bank.correct[i].astype(np.int64))
                        for i, m in enumerate(MODALITIES)}
                cm = fit_competence_models(data, ncfg, cfg.train, layout)
                hb = competence_blocks(bank, nv_h[:, :kv], np_h[:, :kp], post, ncfg, layout)
                scores = np.vstack([cm.score_rows(m, layout.assemble(*hb[m])) for m in MODALITIES])
                pred[held_idx] = [d.label.bit for d in decide_from_scores(post, scores, fcfg)]
            grid[a, b] = confusion_metrics(pred, y).private.f1
    return SweepResult(k_v, k_p, grid, cfg.hash())


def run_sweep(cfg: RunConfig, ds: LabeledDataset | None = None, **kw) -> SweepResult:
    """Sweep on the configured data split; the test split is never read."""
    train_set, estimate_set, _ = make_splits(cfg, ds)
    return sweep(estimate_set, train_base(train_set, cfg.train), cfg, **kw)


@dataclass
class MultiSeedResult:
    seeds: tuple[int, ...]
    per_seed: list[dict[str, EvalReport]]
    mean: dict[str, dict[str, float]] = field(default_factory=dict)
    std: dict[str, dict[str, float]] = field(default_factory=dict)
    significance: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "per_seed": [{k: r.to_dict() for k, r in reps.items()} for reps in self.per_seed],
            "mean": self.mean,
            "std": self.std,
            "significance": self.significance,
        }


def summarize(per_seed: list[dict[str, EvalReport]]) -> tuple[dict, dict]:
    """Mean and population standard deviation of every scalar metric."""
    mean, std = {}, {}
    for name in per_seed[0]:
        flats = [reps[name].flat() for reps in per_seed]
        mean[name] = {k: float(np.mean([f[k] for f in flats])) for k in flats[0]}
        std[name] = {k: float(np.std([f[k] for f in flats])) for k in flats[0]}
    return mean, std


def multi_seed_run(cfg: RunConfig, n_seeds: int | None = None, ds: LabeledDataset | None = None,
                   variants=None, baselines=None, reference: str = "dmfp") -> MultiSeedResult:
    """Repeat split, training and evaluation with seeds ``seed, seed+1, ...``.

    The data itself is fixed; each seed draws a new split and new training
    shuffles. Paired t-tests compare the private F1 of ``reference`` with
    every other system across seeds.
    """
    n_seeds = cfg.run.n_seeds if n_seeds is None else n_seeds
    if n_seeds < 1:
        raise ValueError("n_seeds must be positive")
    ds = load_data(cfg) if ds is None else ds
    seeds = tuple(cfg.split.seed + i for i in range(n_seeds))
    variants = cfg.run.variants if variants is None else variants
    per_seed = []
    for s in seeds:
        c = cfg.with_seed(s)
        train_set, estimate_set, test_set = make_splits(c, ds)
        system = train_system(train_set, estimate_set, c, variants, baselines)
        ev = evaluate_system(system, test_set, variants, {"seed": s, "config_hash": c.hash()})
        per_seed.append(ev.reports)
    mean, std = summarize(per_seed)
    sig = {}
    if n_seeds >= 2 and reference in per_seed[0]:
        ref = [r[reference].private.f1 for r in per_seed]
        for name in per_seed[0]:
            if name != reference:
                t, p = paired_t_test(ref, [r[name].private.f1 for r in per_seed])
                sig[name] = {"t": t if math.isfinite(t) else str(t), "p": p}
    return MultiSeedResult(seeds, per_seed, mean, std, sig)
