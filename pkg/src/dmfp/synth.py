"""Synthetic multi-modal data where each region has one informative modality.

Every record belongs to a region. In every modality block the region shows
up as a Gaussian center, so visual neighbors recover regions. Only the
region's informative modality carries the label, on coordinate 0 of its
block, with a hard margin; a ``noise`` fraction of records has that
coordinate encode the flipped label instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, Modality, PrivacyLabel, l2_normalize, write_dataset
from dmfp.errors import DataError


@dataclass(frozen=True)
class SynthConfig:
    n: int = 3000
    dims: tuple[int, int, int] = (8, 8, 8)
    n_regions: int = 3
    # informative modality of region r is informative[r % len(informative)]
    informative: tuple[str, ...] = ("object", "scene", "tag")
    noise: float = 0.1
    class_ratio: float = 0.25
    seed: int = 0
    center_spacing: float = 4.0
    sigma: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        problems = []
        if len(self.dims) != 3 or min(self.dims) < 2:
            problems.append("dims must list three block sizes of at least 2")
        if self.n_regions < 1:
            problems.append("n_regions must be positive")
        elif self.n < 10 * self.n_regions:
            problems.append(f"n={self.n} is below 10 records per region")
        if not 0.0 <= self.noise <= 1.0:
            problems.append("noise must lie in [0, 1]")
        if not 0.0 < self.class_ratio < 1.0:
            problems.append("class_ratio must lie in (0, 1)")
        if not self.informative:
            problems.append("informative must name at least one modality")
        if self.sigma <= 0 or self.center_spacing < 0:
            problems.append("sigma must be positive and center_spacing nonnegative")
        if problems:
            raise DataError("infeasible synthetic config: " + "; ".join(problems))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "informative", tuple(Modality.parse(m).value for m in self.informative))

    def informative_modality(self, region: int) -> Modality:
        return Modality(self.informative[region % len(self.informative)])


@dataclass
class SynthTruth:
    region: dict[str, int]
    corrupted: dict[str, bool]
    informative: dict[int, Modality]
    config: SynthConfig = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "corrupted": self.corrupted,
            "informative": {str(r): m.value for r, m in self.informative.items()},
        }

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "SynthTruth":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({k: int(v) for k, v in d["region"].items()},
                   {k: bool(v) for k, v in d["corrupted"].items()},
                   {int(r): Modality(m) for r, m in d["informative"].items()})


def _centers(d: int, n_regions: int, spacing: float, sigma: float) -> np.ndarray:
    """Region centers with zero on coordinate 0 and pairwise distance spacing * sigma."""
    c = np.zeros((n_regions, d))
    if d - 1 >= n_regions:
        c[:, 1:n_regions + 1] = np.eye(n_regions) * spacing * sigma / np.sqrt(2.0)
    else:
        c[:, 1] = np.arange(n_regions) * spacing * sigma
    return c


def generate(cfg: SynthConfig) -> tuple[LabeledDataset, SynthTruth]:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    n_priv = int(round(n * cfg.class_ratio))
    y = np.zeros(n, dtype=np.int64)
    y[:n_priv] = 1
    y = y[rng.permutation(n)]
    region = (np.arange(n) % cfg.n_regions)[rng.permutation(n)]
    corrupted = rng.random(n) < cfg.noise
    encoded = np.where(corrupted, 1 - y, y)
    sign = 2.0 * encoded - 1.0

    blocks = {}
    for mi, m in enumerate(MODALITIES):
        d = cfg.dims[mi]
        centers = _centers(d, cfg.n_regions, cfg.center_spacing, cfg.sigma)
        X = centers[region] + cfg.sigma * rng.standard_normal((n, d))
        informative = np.array([cfg.informative_modality(r) is m for r in region])
        # coordinate 0: label with margin sigma on informative records, flat noise elsewhere
        u = rng.uniform(-1.0, 1.0, n)
        X[:, 0] = np.where(informative, sign * (2.0 * cfg.sigma + cfg.sigma * u), cfg.sigma * u)
        blocks[m] = X

    ids = [f"s{i:05d}" for i in range(n)]
    records = []
    for i, rid in enumerate(ids):
        rb = {m: blocks[m][i] for m in MODALITIES}
        if cfg.normalize:
            rb = {m: l2_normalize(v) for m, v in rb.items()}
        records.append(FeatureRecord(rid, rb, PrivacyLabel.from_bit(y[i])))
    ds = LabeledDataset(tuple(records), dict(zip(MODALITIES, cfg.dims)))
    truth = SynthTruth(
        {rid: int(region[i]) for i, rid in enumerate(ids)},
        {rid: bool(corrupted[i]) for i, rid in enumerate(ids)},
        {r: cfg.informative_modality(r) for r in range(cfg.n_regions)},
        cfg,
    )
    return ds, truth


def write_synthetic(cfg: SynthConfig, directory, stem: str = "synth") -> tuple[Path, Path]:
    """Generate and write dataset files plus the ground-truth sidecar."""
    ds, truth = generate(cfg)
    manifest = write_dataset(ds, directory, stem, normalize=False)
    sidecar = truth.write(Path(directory) / f"{stem}.truth.json")
    return manifest, sidecar


def oracle_report(ds: LabeledDataset, truth: SynthTruth, base) -> dict:
    """Per-modality accuracy overall and per region, and the at-least-one ceiling."""
    y = ds.labels
    region = np.array([truth.region[i] for i in ds.ids])
    correct = {}
    for i, m in enumerate(MODALITIES):
        clf = base[m] if isinstance(base, dict) else base[i]
        pred = (clf.proba_private(ds.matrix(m)) > 0.5).astype(np.int64)
        correct[m] = pred == y
    stack = np.vstack([correct[m] for m in MODALITIES])
    any_correct = stack.any(axis=0)
    per_modality = {m.value: 100.0 * float(correct[m].mean()) for m in MODALITIES}
    per_region = {}
    for r in sorted(set(region.tolist())):
        mask = region == r
        per_region[str(r)] = {
            "informative": truth.informative[r].value,
            "size": int(mask.sum()),
            **{m.value: 100.0 * float(correct[m][mask].mean()) for m in MODALITIES},
            "at_least_one": 100.0 * float(any_correct[mask].mean()),
        }
    best = max(per_modality.values())
    ceiling = 100.0 * float(any_correct.mean())
    return {
        "per_modality": per_modality,
        "per_region": per_region,
        "at_least_one": ceiling,
        "best_single": best,
        "headroom": ceiling - best,
    }
