"""Job configuration files (JSON)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import ConfigError
from .search import SearchConfig

_SEARCH_KEYS = ("clustering", "exploration", "early_stopping", "scaling_prediction")


@dataclass(frozen=True)
class JobConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    trace: str | None = None
    synthetic: dict | None = None
    output: str | None = None
    oracle: dict | None = None

    @property
    def seed(self) -> int:
        return self.search.seed

    def to_json(self) -> dict:
        out = dict(self.search.to_json())
        if self.trace is not None:
            out["trace"] = self.trace
        if self.synthetic is not None:
            out["synthetic"] = self.synthetic
        if self.output is not None:
            out["output"] = self.output
        if self.oracle is not None:
            out["oracle"] = self.oracle
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "JobConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        known = set(_SEARCH_KEYS) | {"seed", "trace", "synthetic", "output", "oracle"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if data.get("trace") is not None and data.get("synthetic") is not None:
            raise ConfigError("give either 'trace' or 'synthetic', not both")
        oracle = data.get("oracle")
        if oracle is not None and (not isinstance(oracle, Mapping) or "command" not in oracle):
            raise ConfigError("'oracle' must be an object with a 'command'")
        return cls(
            search=SearchConfig.from_json(data),
            trace=data.get("trace"),
            synthetic=data.get("synthetic"),
            output=data.get("output"),
            oracle=dict(oracle) if oracle is not None else None,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def load_config(path: str | os.PathLike) -> tuple[JobConfig, Path]:
    """Parse a config file; returns it with the directory relative paths resolve against."""
    path = Path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return JobConfig.from_json(data), path.parent
