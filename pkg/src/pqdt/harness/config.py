"""Run configuration: one JSON document with a versioned schema.

Unknown keys are errors at every level, so a typo never silently falls back
to a default.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..network.config import NetworkConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OptimizerConfig(_Strict):
    lr: float = Field(1e-4, gt=0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)


class ScheduleConfig(_Strict):
    warmup_epochs: int = Field(10, ge=0)
    lr_min: float = Field(1e-5, gt=0)
    epochs: int = Field(300, ge=1)


class DataConfig(_Strict):
    train_manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    prefetch: int = Field(2, ge=1)


class RunConfig(_Strict):
    schema_version: int = SCHEMA_VERSION
    network: dict[str, Any] = Field(default_factory=lambda: {"preset": "full"})
    optimizer: OptimizerConfig = OptimizerConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    batch_size: int = Field(32, ge=1)
    data: DataConfig = DataConfig()
    seed: int = Field(0, ge=0)
    anneal_epochs: Optional[int] = Field(None, ge=1)
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = Field(1, ge=1)
    log_path: Optional[str] = None

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    @field_validator("network")
    @classmethod
    def _network(cls, v):
        NetworkConfig.from_dict(v)
        return v

    @model_validator(mode="after")
    def _ranges(self):
        if self.schedule.warmup_epochs > self.schedule.epochs:
            raise ValueError(f"warmup_epochs={self.schedule.warmup_epochs} exceeds epochs={self.schedule.epochs}")
        if self.schedule.lr_min > self.optimizer.lr:
            raise ValueError(f"lr_min={self.schedule.lr_min} exceeds lr={self.optimizer.lr}")
        return self

    @property
    def net(self) -> NetworkConfig:
        return NetworkConfig.from_dict(self.network)

    @property
    def anneal_horizon(self) -> int:
        return self.anneal_epochs or self.schedule.epochs

    def lr_at(self, epoch: float) -> float:
        from .schedule import lr_at
        s = self.schedule
        return lr_at(epoch, self.optimizer.lr, s.lr_min, s.warmup_epochs, s.epochs)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            msg = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
            lines.append(f"{where}: {msg}")
        raise ConfigError("invalid run config:\n  " + "\n  ".join(lines)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(data)


def config_digest(net: NetworkConfig) -> str:
    """SHA-256 of the canonical network description; guards resume and evaluation."""
    blob = json.dumps(net.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
