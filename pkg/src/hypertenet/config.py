"""Run configuration: JSON file + ``--section.key=value`` overrides, validated up front.

Schema (every key optional; defaults shown in the dataclasses below)::

    {
      "data":  {"input": str, "format": "csv"|"tsv"|null, "min_list_len": int,
                "split_seed": int, "n_negatives": int},
      "knn":   {"k": int, "walks_per_node": int, "walk_length": int, "window": int,
                "negatives": int, "epochs": int, "dim": int|null, "seed": int},
      "train": {... TrainConfig fields ...},
      "output_dir": str,
      "top_n": int
    }
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class UsageError(ValueError):
    pass


@dataclass
class DataConfig:
    input: str | None = None
    format: str | None = None
    min_list_len: int = 3
    split_seed: int = 0
    n_negatives: int = 100


@dataclass
class KnnConfig:
    k: int = 50
    walks_per_node: int = 10
    walk_length: int = 80
    window: int = 5
    negatives: int = 5
    epochs: int = 1
    dim: int | None = None  # None: same as the entity embedding size
    seed: int = 0


@dataclass
class TrainConfig:
    dim: int = 64
    hidden: int = 64
    heads: int = 8
    gcn_layers: int = 2
    blocks: int = 2
    ssn_heads: int = 1
    dropout: float = 0.2
    max_len: int = 300
    lr: float = 0.001
    graph_batch: int = 2048
    ssn_batch: int = 256
    graph_negatives: int = 3
    ssn_negatives: int = 3
    epochs: int = 300
    patience: int = 20
    eval_k: int = 5
    seed: int = 0
    disable_uhgnn: bool = False
    disable_mgnn_feed: bool = False
    ssn_only: bool = False
    freeze_graph_in_ssn: bool = False
    exclude_self_in_softmax: bool = False
    final_norm: bool = True

    def __post_init__(self):
        if self.ssn_only:
            # SSN-only implies no hypergraph branch and plain embeddings
            self.disable_uhgnn = True
            self.disable_mgnn_feed = True

    def validate(self) -> None:
        positive = [
            "dim", "hidden", "heads", "gcn_layers", "blocks", "ssn_heads", "max_len", "lr",
            "graph_batch", "ssn_batch", "graph_negatives", "ssn_negatives", "epochs", "patience", "eval_k",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise UsageError(f"train.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"train.dropout must be in [0, 1), got {self.dropout}")
        if self.hidden % self.heads:
            raise UsageError(f"train.heads ({self.heads}) must divide train.hidden ({self.hidden})")
        if self.dim % self.ssn_heads:
            raise UsageError(f"train.ssn_heads ({self.ssn_heads}) must divide train.dim ({self.dim})")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"
    top_n: int = 5

    def validate(self) -> "RunConfig":
        self.train.validate()
        for name in ("k", "walks_per_node", "window", "negatives"):
            if getattr(self.knn, name) <= 0:
                raise UsageError(f"knn.{name} must be positive")
        if self.knn.walk_length < 2:
            raise UsageError("knn.walk_length must be >= 2")
        if self.knn.epochs < 0:
            raise UsageError("knn.epochs must be >= 0")
        if self.data.min_list_len < 3:
            raise UsageError("data.min_list_len must be >= 3 for leave-one-out")
        if self.data.n_negatives <= 0:
            raise UsageError("data.n_negatives must be positive")
        if self.data.format not in (None, "csv", "tsv"):
            raise UsageError(f"data.format must be csv or tsv, got {self.data.format!r}")
        if self.top_n <= 0:
            raise UsageError("top_n must be positive")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {"data": DataConfig, "knn": KnnConfig, "train": TrainConfig}


def _coerce(raw: Any, current: Any, where: str, annotation: str) -> Any:
    if isinstance(raw, str):
        low = raw.strip().lower()
        if low in ("null", "none"):
            return None
        if isinstance(current, bool) or "bool" in annotation:
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise UsageError(f"{where}: expected a boolean, got {raw!r}")
        try:
            if "int" in annotation and "float" not in annotation:
                return int(raw)
            if "float" in annotation:
                return float(raw)
        except ValueError:
            raise UsageError(f"{where}: cannot parse {raw!r} as {annotation}") from None
        return raw
    if "bool" in annotation and not isinstance(raw, bool) and raw is not None:
        raise UsageError(f"{where}: expected a boolean, got {raw!r}")
    if "float" in annotation and isinstance(raw, int) and not isinstance(raw, bool):
        return float(raw)
    if annotation == "int" and not isinstance(raw, int):
        raise UsageError(f"{where}: expected an integer, got {raw!r}")
    return raw


def _apply(cfg: RunConfig, key: str, value: Any) -> None:
    parts = key.split(".")
    if len(parts) == 1:
        names = {f.name: f for f in fields(RunConfig) if f.name not in _SECTIONS}
        if parts[0] not in names:
            raise UsageError(f"unknown config key {key!r}")
        f = names[parts[0]]
        setattr(cfg, f.name, _coerce(value, getattr(cfg, f.name), key, str(f.type)))
        return
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise UsageError(f"unknown config key {key!r}")
    section = getattr(cfg, parts[0])
    names = {f.name: f for f in fields(section)}
    if parts[1] not in names:
        raise UsageError(f"unknown config key {key!r}")
    f = names[parts[1]]
    setattr(section, f.name, _coerce(value, getattr(section, f.name), key, str(f.type)))


def _flatten(obj: dict, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            if prefix or k not in _SECTIONS:
                raise UsageError(f"unknown config section {key!r}")
            out += _flatten(v, key + ".")
        else:
            out.append((key, v))
    return out


def parse_config(path: str | Path | None = None, overrides: dict[str, Any] | list[str] | None = None) -> RunConfig:
    """Load JSON (empty file or None means all defaults), apply overrides, validate.

    ``overrides`` is a mapping of dotted keys, or a list of ``key=value`` strings
    (a leading ``--`` is accepted).
    """
    cfg = RunConfig()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8").strip()
        if text:
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as e:
                raise UsageError(f"{path}: invalid JSON ({e})") from None
            if not isinstance(obj, dict):
                raise UsageError(f"{path}: top level must be an object")
            for key, value in _flatten(obj):
                _apply(cfg, key, value)
    if isinstance(overrides, list):
        pairs = []
        for item in overrides:
            item = item[2:] if item.startswith("--") else item
            if "=" not in item:
                raise UsageError(f"override {item!r} must look like section.key=value")
            k, v = item.split("=", 1)
            pairs.append((k, v))
        overrides = dict(pairs)
    for key, value in (overrides or {}).items():
        _apply(cfg, key, value)
    cfg.train.__post_init__()
    return cfg.validate()


def config_from_dict(obj: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in _flatten(obj):
        _apply(cfg, key, value)
    cfg.train.__post_init__()
    return cfg.validate()
