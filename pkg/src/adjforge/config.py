"""Service configuration: JSON file with ADJFORGE_* environment overrides."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

ENV_PREFIX = "ADJFORGE_"


@dataclass
class ServiceConfig:
    runs_dir: str = "runs"
    library_dir: str | None = None
    workers: int = 1
    host: str = "127.0.0.1"
    port: int = 8000
    static_dir: str | None = None   # built UI bundle, served at /

    @classmethod
    def load(cls, config_file: str | None = None, **overrides) -> "ServiceConfig":
        values: dict = {}
        if config_file:
            with open(config_file) as f:
                values.update(json.load(f))
        for f_ in fields(cls):
            env = os.environ.get(ENV_PREFIX + f_.name.upper())
            if env is not None:
                values[f_.name] = int(env) if f_.type == "int" else env
        for k, v in overrides.items():
            if v is not None:
                values[k] = v
        known = {f_.name for f_ in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})
