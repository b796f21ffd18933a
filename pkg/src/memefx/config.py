"""YAML run configuration."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import yaml

from .classifiers import ClassifierSpec
from .errors import ConfigError
from .evaluation import SplitRatios
from .extractors import ModelConfig, TrainConfig

EXAMPLE = """\
seed: 7
paths:
  manifest: manifest.csv
  embeddings: [glove.txt, fasttext.txt]
  out_dir: run
data:                  # optional column / label remapping for foreign manifests
  columns: {}
  label_map: null
preprocess:
  pad_length: 32
  image_size: [32, 32]
  min_count: 1
  embed_dim: 16
  oov_policy: zero_vector
split: {train: 0.75, val: 0.10, test: 0.15}
model: {lstm_size: 32, latent_dim: 32, fusion_dim: 32, head_hidden: 32}
train: {max_epochs: 50, batch_size: 32, patience: 5, lr: 0.001}
cv: {k: 10}
classifiers:
  - {family: linear_svc}
  - {family: knn, hyper: {k: 1}}
  - {family: knn, hyper: {k: 3}}
  - {family: knn, hyper: {k: 5}}
  - {family: decision_tree}
  - {family: random_forest}
  - {family: gradient_boosting}
"""


@dataclass
class PreprocessSettings:
    pad_length: int = 32
    image_size: tuple = (224, 224)
    min_count: int = 1
    embed_dim: int = 50
    oov_policy: str = "zero_vector"


def _build(cls, raw, section):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")
    return cls(**raw)


@dataclass
class RunConfig:
    seed: int
    manifest: str
    embeddings: list
    out_dir: str
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    split: SplitRatios = field(default_factory=SplitRatios)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    classifiers: list = field(default_factory=list)
    cv_k: int = 10
    columns: dict = field(default_factory=dict)
    label_map: dict = None

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        if "seed" not in raw:
            raise ConfigError("config must set 'seed'")
        paths = raw.get("paths") or {}
        for key in ("manifest", "embeddings"):
            if key not in paths:
                raise ConfigError(f"config is missing paths.{key}")
        embeddings = paths["embeddings"]
        if isinstance(embeddings, str):
            embeddings = [embeddings]
        resolve = lambda p: p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))
        pre = _build(PreprocessSettings, raw.get("preprocess"), "preprocess")
        pre.image_size = tuple(pre.image_size)
        model = _build(ModelConfig, raw.get("model"), "model")
        model.embed_dim = pre.embed_dim
        train = _build(TrainConfig, raw.get("train"), "train")
        train.seed = int(raw["seed"])
        specs = []
        for entry in raw.get("classifiers") or [{"family": "knn", "hyper": {"k": 1}}]:
            specs.append(ClassifierSpec(**entry))
        data = raw.get("data") or {}
        return cls(
            seed=int(raw["seed"]),
            manifest=resolve(paths["manifest"]),
            embeddings=[resolve(p) for p in embeddings],
            out_dir=resolve(paths.get("out_dir", "run")),
            preprocess=pre,
            split=_build(SplitRatios, raw.get("split"), "split"),
            model=model.validate(),
            train=train.validate(),
            classifiers=specs,
            cv_k=int((raw.get("cv") or {}).get("k", 10)),
            columns=data.get("columns") or {},
            label_map=data.get("label_map"),
        )

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)))

    def with_overrides(self, seed=None, out_dir=None):
        if seed is not None:
            self.seed = int(seed)
            self.train.seed = int(seed)
        if out_dir is not None:
            self.out_dir = os.path.abspath(out_dir)
        return self

    def check_paths(self):
        for p in [self.manifest] + list(self.embeddings):
            if not os.path.isfile(p):
                raise ConfigError(f"referenced file does not exist: {p}")
