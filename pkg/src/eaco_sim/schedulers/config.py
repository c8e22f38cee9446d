from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from ..errors import ConfigError


class Policy(str, Enum):
    FIFO = "fifo"
    FIFO_PACKED = "fifo_packed"
    GANDIVA = "gandiva"
    EACO = "eaco"

    @classmethod
    def parse(cls, name: str | Policy) -> Policy:
        if isinstance(name, Policy):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"fifopacked": "fifo_packed", "gandivalike": "gandiva", "gandiva_like": "gandiva"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown policy {name!r}; choose from {[p.value for p in cls]}") from None


@dataclass
class SchedulerConfig:
    policy: Policy = Policy.EACO
    alpha: float = 0.5
    u_threshold: float = 90.0
    mem_threshold: float = 90.0
    safety_margin: float = 0.10
    max_coloc: int = 4
    introspection_threshold: float = 0.25  # Gandiva unpack trigger
    seed_history: bool = True

    def __post_init__(self):
        self.policy = Policy.parse(self.policy)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("u_threshold", "mem_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 100.0:
                raise ConfigError(f"{name} must lie in (0, 100], got {v}")
        if not isinstance(self.max_coloc, int) or self.max_coloc < 1:
            raise ConfigError(f"max_coloc must be an integer >= 1, got {self.max_coloc!r}")
        if self.safety_margin <= -1.0:
            raise ConfigError("safety_margin must exceed -1")
        if self.introspection_threshold < 0:
            raise ConfigError("introspection_threshold must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> SchedulerConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scheduler fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["policy"] = self.policy.value
        return d
