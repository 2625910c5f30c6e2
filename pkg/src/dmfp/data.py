"""Domain types, dataset manifests, feature ingestion and splitting."""

from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from dmfp.errors import DataError


class PrivacyLabel(enum.Enum):
    PRIVATE = "private"
    PUBLIC = "public"

    @classmethod
    def parse(cls, text: str) -> "PrivacyLabel":
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise DataError(f"unknown label string {text!r}") from None

    @classmethod
    def from_bit(cls, bit) -> "PrivacyLabel":
        return cls.PRIVATE if bit else cls.PUBLIC

    @property
    def bit(self) -> int:
        """1 for private, 0 for public."""
        return 1 if self is PrivacyLabel.PRIVATE else 0

    def __str__(self) -> str:
        return self.value


class Modality(enum.Enum):
    OBJECT = "object"
    SCENE = "scene"
    TAG = "tag"

    @property
    def order(self) -> int:
        return _MODALITY_ORDER[self]

    @classmethod
    def parse(cls, text: str) -> "Modality":
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise DataError(f"unknown modality {text!r}") from None

    def __lt__(self, other: "Modality") -> bool:
        return self.order < other.order

    def __str__(self) -> str:
        return self.value


_MODALITY_ORDER = {Modality.OBJECT: 0, Modality.SCENE: 1, Modality.TAG: 2}
MODALITIES: tuple[Modality, ...] = (Modality.OBJECT, Modality.SCENE, Modality.TAG)


def _frozen(v) -> np.ndarray:
    arr = np.array(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError("feature blocks must be 1-D vectors")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    id: str
    blocks: Mapping[Modality, np.ndarray]
    label: PrivacyLabel | None = None

    def __post_init__(self):
        blocks = {}
        for m in sorted(self.blocks):
            arr = _frozen(self.blocks[m])
            if not np.all(np.isfinite(arr)):
                raise DataError(f"record {self.id!r}: non-finite value in {m} block")
            blocks[m] = arr
        object.__setattr__(self, "blocks", blocks)

    def block(self, modality: Modality) -> np.ndarray:
        try:
            return self.blocks[modality]
        except KeyError:
            raise DataError(f"record {self.id!r} has no {modality} block") from None

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.blocks.keys() == other.blocks.keys()
            and all(np.array_equal(self.blocks[m], other.blocks[m]) for m in self.blocks)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Ordered, immutable collection of records sharing block dimensions.

    Matrix views (`matrix`, `concat`, `labels`) are computed once and cached.
    """

    records: tuple[FeatureRecord, ...]
    dims: Mapping[Modality, int] = field(default_factory=dict)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        dims = dict(self.dims)
        if not dims and records:
            dims = {m: len(v) for m, v in records[0].blocks.items()}
        dims = {m: int(dims[m]) for m in sorted(dims)}
        for m, d in dims.items():
            if d <= 0:
                raise DataError(f"dimension of {m} must be positive, got {d}")
        seen = set()
        for rec in records:
            if rec.id in seen:
                raise DataError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)
            if set(rec.blocks) != set(dims):
                raise DataError(f"record {rec.id!r} blocks {sorted(map(str, rec.blocks))} "
                                f"do not match dataset modalities {sorted(map(str, dims))}")
            for m, d in dims.items():
                if len(rec.blocks[m]) != d:
                    raise DataError(f"record {rec.id!r}: {m} block has length "
                                    f"{len(rec.blocks[m])}, expected {d}")
        object.__setattr__(self, "dims", dims)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i) -> FeatureRecord:
        return self.records[i]

    @property
    def modalities(self) -> tuple[Modality, ...]:
        return tuple(self.dims)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    @cached_property
    def index(self) -> dict[str, int]:
        return {rid: i for i, rid in enumerate(self.ids)}

    @cached_property
    def id_rank(self) -> np.ndarray:
        """Position of each record in ascending-id order (used for tie-breaking)."""
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        return rank

    @property
    def is_labeled(self) -> bool:
        return all(r.label is not None for r in self.records)

    @cached_property
    def labels(self) -> np.ndarray:
        """Label bits (1 = private). Raises if any record is unlabeled."""
        if not self.is_labeled:
            raise DataError("dataset contains unlabeled records")
        out = np.array([r.label.bit for r in self.records], dtype=np.int64)
        out.setflags(write=False)
        return out

    def matrix(self, modality: Modality) -> np.ndarray:
        return self._matrices[modality]

    @cached_property
    def _matrices(self) -> dict[Modality, np.ndarray]:
        out = {}
        for m, d in self.dims.items():
            mat = np.empty((len(self.records), d))
            for i, r in enumerate(self.records):
                mat[i] = r.blocks[m]
            mat.setflags(write=False)
            out[m] = mat
        return out

    @cached_property
    def concat(self) -> np.ndarray:
        """Rows of concatenated blocks in modality order (object, scene, tag)."""
        if not self.records:
            return np.empty((0, sum(self.dims.values())))
        mat = np.hstack([self.matrix(m) for m in self.dims])
        mat.setflags(write=False)
        return mat

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset(tuple(self.records[i] for i in indices), self.dims)

    def select_ids(self, ids: Sequence[str]) -> "LabeledDataset":
        try:
            return self.subset([self.index[i] for i in ids])
        except KeyError as exc:
            raise DataError(f"id {exc.args[0]!r} not in dataset") from None

    def class_counts(self) -> tuple[int, int]:
        """(private, public) counts."""
        n_priv = int(self.labels.sum())
        return n_priv, len(self) - n_priv


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    fractions: tuple[float, float, float] = (15 / 32, 10 / 32, 7 / 32)
    stratified: bool = True

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3:
            raise DataError("split fractions must be (train, estimate, test)")
        if any(f < 0 or f > 1 for f in fr):
            raise DataError(f"split fractions must lie in [0, 1], got {fr}")
        if not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise DataError(f"split fractions must sum to 1, got {sum(fr)}")
        object.__setattr__(self, "fractions", fr)


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("cannot normalize a vector with non-finite entries")
    norm = np.linalg.norm(v)
    if norm == 0:
        return v.copy()
    return v / norm


def normalize_record(rec: FeatureRecord) -> FeatureRecord:
    return FeatureRecord(rec.id, {m: l2_normalize(b) for m, b in rec.blocks.items()}, rec.label)


def normalize_dataset(ds: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(tuple(normalize_record(r) for r in ds.records), ds.dims)


def concat_modalities(rec: FeatureRecord) -> np.ndarray:
    missing = [m for m in MODALITIES if m not in rec.blocks]
    if missing:
        raise DataError(f"record {rec.id!r} missing blocks: {', '.join(map(str, missing))}")
    return np.concatenate([rec.blocks[m] for m in MODALITIES])


# -- manifest I/O -----------------------------------------------------------

def _read_feature_csv(path: Path, dim: int, modality: Modality) -> tuple[list[str], np.ndarray]:
    if not path.is_file():
        raise DataError(f"missing feature file {str(path)!r}")
    ids, rows = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "id":
            raise DataError(f"{path.name}: header must start with 'id'")
        if len(header) - 1 != dim:
            raise DataError(f"{path.name}: header has {len(header) - 1} feature columns, "
                            f"manifest says {modality} dim is {dim}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 1 != dim:
                raise DataError(f"{path.name}:{lineno}: expected {dim} values, got {len(row) - 1}")
            try:
                vals = [float(x) for x in row[1:]]
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: non-numeric feature value") from None
            if not all(math.isfinite(x) for x in vals):
                raise DataError(f"{path.name}:{lineno}: non-finite feature value")
            ids.append(row[0])
            rows.append(vals)
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), dim)


def _read_labels(path: Path, column: str) -> dict[str, PrivacyLabel | None]:
    if not path.is_file():
        raise DataError(f"missing labels file {str(path)!r}")
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames or column not in reader.fieldnames:
            raise DataError(f"{path.name}: expected columns 'id' and {column!r}")
        for row in reader:
            text = (row[column] or "").strip()
            if row["id"] in out:
                raise DataError(f"duplicate id {row['id']!r} in {path.name}")
            out[row["id"]] = PrivacyLabel.parse(text) if text else None
    return out


def load_dataset(manifest_path) -> LabeledDataset:
    """Load a dataset described by a JSON manifest.

    Every feature file must list the same ids in the same order; that order
    becomes the record order. Blocks are L2-normalized unless the manifest
    sets ``"normalize": false``.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"missing manifest {str(manifest_path)!r}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from None
    base = manifest_path.parent
    entries = manifest.get("modalities")
    if not entries:
        raise DataError("manifest lists no modalities")

    dims: dict[Modality, int] = {}
    blocks: dict[Modality, np.ndarray] = {}
    ids: list[str] | None = None
    for entry in entries:
        m = Modality.parse(entry["name"])
        if m in dims:
            raise DataError(f"modality {m} listed twice")
        dims[m] = int(entry["dim"])
        if dims[m] <= 0:
            raise DataError(f"{m} dim must be positive")
        file_ids, mat = _read_feature_csv(base / entry["file"], dims[m], m)
        if ids is None:
            ids = file_ids
        elif len(file_ids) != len(ids):
            raise DataError(f"dimension mismatch: {m} file has {len(file_ids)} rows, "
                            f"expected {len(ids)}")
        elif file_ids != ids:
            raise DataError(f"{m} file ids differ from the first modality's ids")
        blocks[m] = mat
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DataError(f"duplicate id {dup!r}")

    labels: dict[str, PrivacyLabel | None] = {}
    if manifest.get("labels_file"):
        labels = _read_labels(base / manifest["labels_file"], manifest.get("label_column", "label"))
        missing = [i for i in ids if i not in labels]
        if missing:
            raise DataError(f"labels file lacks id {missing[0]!r}")

    normalize = bool(manifest.get("normalize", True))
    records = []
    for row, rid in enumerate(ids):
        rec_blocks = {m: blocks[m][row] for m in dims}
        if normalize:
            rec_blocks = {m: l2_normalize(v) for m, v in rec_blocks.items()}
        records.append(FeatureRecord(rid, rec_blocks, labels.get(rid)))
    return LabeledDataset(tuple(records), dims)


def write_dataset(ds: LabeledDataset, directory, stem: str = "dataset",
                  normalize: bool = False) -> Path:
    """Write ``ds`` as per-modality CSVs plus a manifest; returns the manifest path.

    Values are written with ``repr`` so a reload is bit-exact. ``normalize``
    is recorded in the manifest and applied on the next load.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for m, d in ds.dims.items():
        fname = f"{stem}.{m}.csv"
        with (directory / fname).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + [f"f{i}" for i in range(d)])
            for rec in ds.records:
                w.writerow([rec.id] + [repr(float(x)) for x in rec.blocks[m]])
        entries.append({"name": m.value, "file": fname, "dim": d})
    labels_name = f"{stem}.labels.csv"
    with (directory / labels_name).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for rec in ds.records:
            w.writerow([rec.id, "" if rec.label is None else rec.label.value])
    manifest = {"modalities": entries, "labels_file": labels_name, "normalize": normalize}
    path = directory / f"{stem}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


# -- splitting --------------------------------------------------------------

def _split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [n * f for f in fractions]
    sizes = [math.floor(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def _stratified_table(class_sizes: Sequence[int], fractions: Sequence[float]) -> list[list[int]]:
    """Per-class, per-split counts, each the floor or ceiling of its exact share.

    Row sums equal the class sizes; column sums match the largest-remainder
    split sizes when such a rounding exists, otherwise any floor/ceil choice.
    """
    n = sum(class_sizes)
    targets = _split_sizes(n, fractions)
    choices = []
    for c in class_sizes:
        options = []
        for f in fractions:
            x = c * f
            lo = math.floor(x + 1e-12)
            options.append(sorted({lo, lo + 1} if abs(x - round(x)) > 1e-9 else {round(x)}))
        row_opts = [row for row in itertools.product(*options) if sum(row) == c]
        choices.append(row_opts)
    fallback = None
    for table in itertools.product(*choices):
        cols = [sum(col) for col in zip(*table)]
        if cols == targets:
            return [list(r) for r in table]
        if fallback is None:
            fallback = table
    if fallback is None:
        raise DataError("no stratified rounding exists for these fractions")
    return [list(r) for r in fallback]


def split_dataset(ds: LabeledDataset, spec: SplitSpec):
    """Split into (train, estimate, test) datasets.

    Records keep their original relative order inside each split. Stratified
    splits hold every class count within one record of its exact share.
    """
    n = len(ds)
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        y = ds.labels
        groups = [np.flatnonzero(y == 1), np.flatnonzero(y == 0)]
        table = _stratified_table([len(g) for g in groups], spec.fractions)
        parts: list[list[int]] = [[], [], []]
        for g, counts in zip(groups, table):
            perm = g[rng.permutation(len(g))]
            start = 0
            for s, c in enumerate(counts):
                parts[s].extend(perm[start:start + c].tolist())
                start += c
    else:
        perm = rng.permutation(n)
        sizes = _split_sizes(n, spec.fractions)
        bounds = np.cumsum([0] + sizes)
        parts = [perm[bounds[i]:bounds[i + 1]].tolist() for i in range(3)]
    names = ("train", "estimate", "test")
    for name, part in zip(names, parts):
        if not part:
            raise DataError(f"{name} split is empty for fractions {spec.fractions} and {n} records")
    return tuple(ds.subset(sorted(p)) for p in parts)
