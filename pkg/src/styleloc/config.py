"""Run configuration: one JSON document with optional sections.

::

    {
      "data":    {"path": "data/synth", "train": 200, "test": 40, "seed": 0,
                  "height": 64, "width": 96, "camera": null, "sampling": {}},
      "train":   {"scheme": "joint", "lr": 1e-4, "epochs": 5, "seed": 0,
                  "weights": {"style": 1e-5, "content": 1e-5, "pose": 10.0,
                              "keypoint": 2.0, "rot": 1.0},
                  "checkpoint_dir": "runs/joint", "pretrained_featnet": null},
      "matcher": {"tau": 20.0, "stride": 2, "gt_inlier_threshold": 2.0,
                  "ransac": {"iterations": 256, "sample_size": 3,
                             "inlier_threshold": 0.25, "seed": 0}},
      "eval":    {"checkpoint": "runs/joint/ckpt_epoch005.ckpt",
                  "featnet_checkpoint": null, "split": "test", "limit": null,
                  "out": "report.csv"},
      "dump":    {"checkpoint": "...", "featnet_checkpoint": null,
                  "split": "test", "pair": 0, "out": "dump"}
    }

``train.dataset`` defaults to ``data.path``; the ``matcher`` section is
shared by training and evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .matchpose import MatcherConfig
from .synthdata import DataConfig
from .trainer import TrainConfig

SECTIONS = ("data", "train", "matcher", "eval", "dump")


class ConfigError(ValueError):
    pass


@dataclass
class EvalSection:
    checkpoint: str | None = None
    featnet_checkpoint: str | None = None
    split: str = "test"
    limit: int | None = None
    out: str = "report.csv"


@dataclass
class DumpSection:
    checkpoint: str | None = None
    featnet_checkpoint: str | None = None
    split: str = "test"
    pair: int | str = 0
    out: str = "dump"


def _build(cls, d: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


@dataclass
class RunConfig:
    raw: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        return cls(raw)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def data(self) -> DataConfig:
        return _build(DataConfig, self.section("data"), "data")

    def matcher(self) -> MatcherConfig:
        d = self.section("matcher")
        known = {f.name for f in fields(MatcherConfig)}
        if set(d) - known:
            raise ConfigError(f"[matcher] unknown keys: {sorted(set(d) - known)}")
        try:
            return MatcherConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[matcher] {exc}") from exc

    def train(self) -> TrainConfig:
        d = self.section("train")
        d.setdefault("dataset", self.data().path)
        if "matcher" in self.raw:
            d["matcher"] = self.matcher()
        return _build(TrainConfig, d, "train")

    def eval(self) -> EvalSection:
        return _build(EvalSection, self.section("eval"), "eval")

    def dump(self) -> DumpSection:
        return _build(DumpSection, self.section("dump"), "dump")
