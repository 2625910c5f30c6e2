"""Run configuration: TOML sections mapped onto the component configs."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dmfp.competence import CompetenceLayout
from dmfp.data import SplitSpec
from dmfp.errors import ConfigError, DMFPError
from dmfp.fusion import Fallback, FusionConfig, Variant
from dmfp.linear import TrainConfig
from dmfp.neighbors import NeighborhoodConfig
from dmfp.synth import SynthConfig

BASELINE_NAMES = (
    "base_object", "base_scene", "base_tag", "majority_vote",
    "decision_fusion_average", "decision_fusion_max_confidence",
    "policy_select", "stacked", "cluster", "concat",
)

SWEEP_VALUES = tuple(range(10, 100, 10)) + tuple(range(100, 1001, 100))


@dataclass(frozen=True)
class DataConfig:
    # empty manifest: generate data from the [synth] section
    manifest: str = ""


@dataclass(frozen=True)
class CompetenceOptions:
    intersection: bool = False
    soft: bool = False

    def layout(self) -> CompetenceLayout:
        return CompetenceLayout(intersection=self.intersection, soft=self.soft)


@dataclass(frozen=True)
class FusionOptions:
    threshold: float = 0.5
    fallback: Fallback = Fallback.HIGHEST_COMPETENCE
    short_circuit: bool = True
    tie_to_private: bool = False


@dataclass(frozen=True)
class BaselineConfig:
    names: tuple[str, ...] = BASELINE_NAMES
    n_clusters: int = 5
    cluster_k: int = 15
    linkage: str = "ward"
    honest_stacking: bool = False

    def __post_init__(self):
        unknown = [n for n in self.names if n not in BASELINE_NAMES]
        if unknown:
            raise ConfigError(f"unknown baselines {unknown}", [f"baselines.names={n}" for n in unknown])


@dataclass(frozen=True)
class SweepConfig:
    k_v: tuple[int, ...] = SWEEP_VALUES
    k_p: tuple[int, ...] = SWEEP_VALUES
    folds: int = 3


@dataclass(frozen=True)
class RunOptions:
    out: str = "out"
    variants: tuple[Variant, ...] = tuple(Variant)
    n_seeds: int = 5


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    neighbors: NeighborhoodConfig = field(default_factory=NeighborhoodConfig)
    competence: CompetenceOptions = field(default_factory=CompetenceOptions)
    fusion: FusionOptions = field(default_factory=FusionOptions)
    synth: SynthConfig = field(default_factory=SynthConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    run: RunOptions = field(default_factory=RunOptions)

    def fusion_config(self, ncfg: NeighborhoodConfig | None = None) -> FusionConfig:
        f = self.fusion
        return FusionConfig(f.threshold, f.fallback, ncfg or self.neighbors, f.short_circuit,
                            f.tie_to_private)

    def to_dict(self) -> dict:
        return {f.name: _section_dict(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def hash(self) -> str:
        """Digest of everything except the output location."""
        d = self.to_dict()
        d["run"].pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        """Same configuration with a new split and training seed."""
        return dataclasses.replace(self, split=dataclasses.replace(self.split, seed=seed),
                                   train=dataclasses.replace(self.train, seed=seed))


def _plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    return v


def _section_dict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _coerce(default, value):
    if isinstance(default, enum.Enum):
        return type(default)(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"expected a list, got {value!r}")
        if default and isinstance(default[0], enum.Enum):
            return tuple(type(default[0])(x) for x in value)
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ValueError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, str) and isinstance(value, str):
        return value
    raise ValueError(f"unexpected value {value!r}")


def from_dict(d: dict) -> RunConfig:
    """Build a RunConfig from nested section tables; unknown keys are errors."""
    base = RunConfig()
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = [s for s in d if s not in sections]
    for s, table in d.items():
        if s in sections and not isinstance(table, dict):
            unknown.append(s)
        elif s in sections:
            known = {f.name for f in dataclasses.fields(getattr(base, s))}
            unknown += [f"{s}.{k}" for k in table if k not in known]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}", unknown)

    built = {}
    for s in sections:
        default = getattr(base, s)
        table = d.get(s, {})
        kwargs = {}
        bad = []
        for k, v in table.items():
            try:
                kwargs[k] = _coerce(getattr(default, k), v)
            except ValueError as e:
                bad.append((f"{s}.{k}", str(e)))
        if bad:
            raise ConfigError("invalid config values: " + "; ".join(f"{k}: {m}" for k, m in bad),
                              [k for k, _ in bad])
        try:
            built[s] = dataclasses.replace(default, **kwargs)
        except ConfigError:
            raise
        except (DMFPError, ValueError) as e:
            raise ConfigError(f"invalid [{s}] section: {e}", [f"{s}.{k}" for k in kwargs]) from e
    return RunConfig(**built)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML config file (or defaults) and apply ``section.key`` overrides."""
    d = {}
    if path is not None:
        path = Path(path)
        try:
            d = tomllib.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    for dotted, v in (overrides or {}).items():
        s, k = dotted.split(".", 1)
        d.setdefault(s, {})[k] = v
    return from_dict(d)


def to_toml(cfg: RunConfig) -> str:
    """Serialize to TOML text that ``load_config`` reads back to an equal config."""
    lines = []
    for s, table in cfg.to_dict().items():
        lines.append(f"[{s}]")
        for k, v in table.items():
            lines.append(f"{k} = {json.dumps(v)}")
        lines.append("")
    return "\n".join(lines)
