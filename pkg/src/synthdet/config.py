"""Pipeline configuration: one structured file drives every stage.

YAML or JSON by extension. Backend endpoints accept either "mock" or an
HTTP URL and can be overridden per stage through environment variables
(``SYNTHDET_BACKEND_CAPTIONER`` etc).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import yaml

from .edges import EdgeParams
from .errors import ConfigError
from .generation import Regime
from .util import stable_hash

ENV_PREFIX = "SYNTHDET_BACKEND_"
BACKEND_NAMES = ("captioner", "promptgen", "synthesizer", "annotator", "detector")
MIX_SOURCE_NAMES = ("real", "flux", "flux_cn", "sim")


@dataclass(frozen=True)
class BackendEndpoints:
    captioner: str = "mock"
    promptgen: str = "mock"
    synthesizer: str = "mock"
    annotator: str = "mock"
    detector: str = "mock"

    def all_mock(self) -> bool:
        return all(getattr(self, name) == "mock" for name in BACKEND_NAMES)


@dataclass(frozen=True)
class DatasetPaths:
    """Input manifests; any left unset falls back to generated fixtures."""

    real_train: str | None = None
    real_val: str | None = None
    real_test: str | None = None
    sim: str | None = None

    def complete(self) -> bool:
        return all((self.real_train, self.real_val, self.real_test, self.sim))


@dataclass(frozen=True)
class MixTarget:
    name: str
    sources: tuple[str, ...]
    shares: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "shares", tuple(float(s) for s in self.shares))
        if len(self.sources) != len(self.shares):
            raise ConfigError(f"mixes.{self.name}",
                              "sources and shares must have equal length")
        unknown = [s for s in self.sources if s not in MIX_SOURCE_NAMES]
        if unknown:
            raise ConfigError(f"mixes.{self.name}.sources",
                              f"unknown source(s) {unknown}; "
                              f"expected {list(MIX_SOURCE_NAMES)}")
        if abs(sum(self.shares) - 1.0) > 1e-9:
            raise ConfigError(f"mixes.{self.name}.shares", "must sum to 1")


DEFAULT_MIXES = (
    MixTarget("real_plus_sim", ("real", "sim"), (0.5, 0.5)),
    MixTarget("real_plus_flux", ("real", "flux"), (0.5, 0.5)),
    MixTarget("real_plus_flux_cn", ("real", "flux_cn"), (0.5, 0.5)),
    MixTarget("real_plus_flux_plus_sim", ("real", "flux", "sim"),
              (1 / 3, 1 / 3, 1 / 3)),
    MixTarget("real_plus_flux_cn_plus_sim", ("real", "flux_cn", "sim"),
              (1 / 3, 1 / 3, 1 / 3)),
)


@dataclass(frozen=True)
class PipelineConfig:
    output_root: str = "synthdet_out"
    regime: Regime = Regime.R24
    seeds: tuple[int, ...] = (0, 1, 2)
    workers: int = 1
    subset_seed: int = 0
    images_per_class: int = 150
    conditioning_strength: float = 1.0
    retry_limit: int = 2
    label_phrase: str = "military vehicle"
    label_min_confidence: float = 0.0
    datasets: DatasetPaths = field(default_factory=DatasetPaths)
    backends: BackendEndpoints = field(default_factory=BackendEndpoints)
    edge_params: EdgeParams = field(default_factory=EdgeParams)
    mixes: tuple[MixTarget, ...] = DEFAULT_MIXES
    lexicon_file: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "mixes", tuple(self.mixes))
        if not self.seeds:
            raise ConfigError("seeds", "at least one seed is required")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        if self.images_per_class < 1:
            raise ConfigError("images_per_class", "must be at least 1")
        if not (0.0 <= self.label_min_confidence <= 1.0):
            raise ConfigError("label_min_confidence", "must lie in [0, 1]")
        names = [m.name for m in self.mixes]
        if len(set(names)) != len(names):
            raise ConfigError("mixes", "mix names must be unique")

    def to_json(self) -> dict:
        return {
            "output_root": self.output_root,
            "regime": self.regime.value,
            "seeds": list(self.seeds),
            "workers": self.workers,
            "subset_seed": self.subset_seed,
            "images_per_class": self.images_per_class,
            "conditioning_strength": self.conditioning_strength,
            "retry_limit": self.retry_limit,
            "label_phrase": self.label_phrase,
            "label_min_confidence": self.label_min_confidence,
            "datasets": {
                "real_train": self.datasets.real_train,
                "real_val": self.datasets.real_val,
                "real_test": self.datasets.real_test,
                "sim": self.datasets.sim,
            },
            "backends": {name: getattr(self.backends, name)
                         for name in BACKEND_NAMES},
            "edge_params": self.edge_params.to_json(),
            "mixes": [{"name": m.name, "sources": list(m.sources),
                       "shares": list(m.shares)} for m in self.mixes],
            "lexicon_file": self.lexicon_file,
        }

    def config_hash(self) -> str:
        return stable_hash(self.to_json())

    def with_mock_backends(self) -> "PipelineConfig":
        return replace(self, backends=BackendEndpoints())


def _parse_section(payload: Mapping, key: str, where: str) -> Mapping:
    section = payload.get(key, {})
    if not isinstance(section, Mapping):
        raise ConfigError(f"{where}{key}", "must be a mapping")
    return section


def config_from_payload(payload: Mapping) -> PipelineConfig:
    if not isinstance(payload, Mapping):
        raise ConfigError("<document>", "top level must be a mapping")

    known = {"output_root", "regime", "seeds", "workers", "subset_seed",
             "images_per_class", "conditioning_strength", "retry_limit",
             "label_phrase", "label_min_confidence", "datasets", "backends",
             "edge_params", "mixes", "lexicon_file"}
    for key in payload:
        if key not in known:
            raise ConfigError(str(key), "unknown configuration key")

    try:
        regime = Regime(payload.get("regime", "r24"))
    except ValueError:
        raise ConfigError("regime",
                          f"must be one of r8, r24; got {payload.get('regime')!r}")

    datasets_raw = _parse_section(payload, "datasets", "")
    datasets = DatasetPaths(
        real_train=datasets_raw.get("real_train"),
        real_val=datasets_raw.get("real_val"),
        real_test=datasets_raw.get("real_test"),
        sim=datasets_raw.get("sim"))

    backends_raw = _parse_section(payload, "backends", "")
    for name in backends_raw:
        if name not in BACKEND_NAMES:
            raise ConfigError(f"backends.{name}", "unknown backend name")
    backends = BackendEndpoints(**{name: str(backends_raw.get(name, "mock"))
                                   for name in BACKEND_NAMES})

    try:
        edge_params = EdgeParams.from_json(_parse_section(payload, "edge_params", ""))
    except ValueError as exc:
        raise ConfigError("edge_params", str(exc))

    mixes_raw = payload.get("mixes")
    if mixes_raw is None:
        mixes = DEFAULT_MIXES
    else:
        if not isinstance(mixes_raw, list):
            raise ConfigError("mixes", "must be a list")
        mixes = tuple(
            MixTarget(name=str(entry.get("name", f"mix{i}")),
                      sources=tuple(entry.get("sources", ())),
                      shares=tuple(entry.get("shares", ())))
            for i, entry in enumerate(mixes_raw))

    try:
        return PipelineConfig(
            output_root=str(payload.get("output_root", "synthdet_out")),
            regime=regime,
            seeds=tuple(payload.get("seeds", (0, 1, 2))),
            workers=int(payload.get("workers", 1)),
            subset_seed=int(payload.get("subset_seed", 0)),
            images_per_class=int(payload.get("images_per_class", 150)),
            conditioning_strength=float(payload.get("conditioning_strength", 1.0)),
            retry_limit=int(payload.get("retry_limit", 2)),
            label_phrase=str(payload.get("label_phrase", "military vehicle")),
            label_min_confidence=float(payload.get("label_min_confidence", 0.0)),
            datasets=datasets,
            backends=backends,
            edge_params=edge_params,
            mixes=mixes,
            lexicon_file=payload.get("lexicon_file"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError("<document>", str(exc))


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("<file>", f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix in (".yaml", ".yml"):
            payload = yaml.safe_load(text) or {}
        else:
            payload = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {path.name}: {exc}")
    return config_from_payload(payload)


def apply_env_overrides(config: PipelineConfig,
                        environ: Mapping[str, str] | None = None) -> PipelineConfig:
    """Backend endpoints from SYNTHDET_BACKEND_<NAME> variables win."""
    environ = os.environ if environ is None else environ
    overrides = {}
    for name in BACKEND_NAMES:
        value = environ.get(f"{ENV_PREFIX}{name.upper()}")
        if value:
            overrides[name] = value
    if not overrides:
        return config
    merged = {name: overrides.get(name, getattr(config.backends, name))
              for name in BACKEND_NAMES}
    return replace(config, backends=BackendEndpoints(**merged))
