"""Run configuration: one JSON document that fully determines a training run."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .exceptions import ConfigurationError
from .model import ARCHITECTURES, DEFAULT_VGG
from .neighborhood import SELECTIONS, SIGMA_MODES, LgnnPolicy, SomDims
from .optim import SGD, LrSchedule


def _default_lgnn():
    return {"selection": "off", "sigma_mode": "constant", "sigma": 0.5, "kernel_size": 3,
            "normalize": True}


@dataclass
class RunConfig:
    arch: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_VGG))
    data: dict = field(default_factory=lambda: {"kind": "synthetic", "classes": 4,
                                                "per_class": 100, "test_per_class": 50,
                                                "seed": 0})
    epochs: int = 20
    batch_size: int = 32
    optimizer: dict = field(default_factory=lambda: {"lr": 0.05, "momentum": 0.9,
                                                     "weight_decay": 5e-4})
    schedule: dict = field(default_factory=lambda: {"milestones": [], "factor": 0.2})
    lgnn: dict = field(default_factory=_default_lgnn)
    som_dims: dict = field(default_factory=lambda: SomDims.default().to_dict())
    seeds: dict = field(default_factory=lambda: {"init": 0, "data": 0, "dropout": 0})
    augment: bool = False
    normalization: dict | None = None
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.arch.get("name") not in ARCHITECTURES:
            raise ConfigurationError(f"unknown architecture {self.arch.get('name')!r}")
        if self.data.get("kind") not in ("synthetic", "cifar100"):
            raise ConfigurationError("data.kind must be 'synthetic' or 'cifar100'")
        if self.data["kind"] == "cifar100" and "path" not in self.data:
            raise ConfigurationError("cifar100 data source needs a 'path'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        lg = {**_default_lgnn(), **self.lgnn}
        if lg["selection"] not in SELECTIONS or lg["sigma_mode"] not in SIGMA_MODES:
            raise ConfigurationError(f"bad lgnn policy {self.lgnn}")
        self.lgnn = lg
        self.seeds = {"init": 0, "data": 0, "dropout": 0, **self.seeds}
        self.policy()
        self.lr_schedule()
        self.dims()

    def policy(self) -> LgnnPolicy:
        return LgnnPolicy(**self.lgnn)

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(self.optimizer["lr"], tuple(self.schedule.get("milestones", ())),
                          self.schedule.get("factor", 0.2))

    def sgd(self) -> SGD:
        o = self.optimizer
        return SGD(o["lr"], o.get("momentum", 0.9), o.get("weight_decay", 5e-4))

    def dims(self) -> SomDims:
        return SomDims.from_dict(self.som_dims)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
