"""Run configuration: a ``key = value`` text file, overridden by CLI flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "resolve_map", "BUILTIN_MAPS"]

BUILTIN_MAPS = ("rooms2x2", "rooms3x3", "rooms4x4", "rooms6x6")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    map: str = "rooms2x2"
    partition: str | None = None
    blocks: int = 1
    rooms: int | None = None
    beta: float = 0.95
    capture_radius: int = 1
    slip: float = 0.0
    tol: float = 1e-6
    phi_tol: float = 1e-9
    terminal_mode: str = "fixed"
    episodes: int = 2000
    seed: int = 0
    step_cap: int = 1000
    out: str = "out"
    threads: int | None = None
    trajectories: int = 0

    def validate(self) -> "RunConfig":
        if not 0.0 < self.beta < 1.0:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.capture_radius < 0:
            raise ConfigError("capture_radius must be >= 0")
        if not 0.0 <= self.slip < 1.0:
            raise ConfigError("slip must lie in [0, 1)")
        if self.tol <= 0 or self.phi_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.rooms is not None and self.rooms < 1:
            raise ConfigError("rooms must be >= 1")
        if self.episodes < 1 or self.step_cap < 1:
            raise ConfigError("episodes and step_cap must be positive")
        if self.trajectories < 0:
            raise ConfigError("trajectories must be >= 0")
        if self.terminal_mode not in ("fixed", "recurring"):
            raise ConfigError("terminal_mode must be 'fixed' or 'recurring'")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.partition is not None and not Path(self.partition).is_file():
            raise ConfigError(f"partition file not found: {self.partition}")
        resolve_map(self.map)
        return self

    def thread_count(self) -> int:
        if self.threads is not None:
            return self.threads
        env = os.environ.get("PEG_HIER_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(f"PEG_HIER_THREADS must be an integer, got {env!r}") from None
            if n < 1:
                raise ConfigError("PEG_HIER_THREADS must be >= 1")
            return n
        return os.cpu_count() or 1

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


def _coerce(name: str, raw: str, annotation: str):
    if raw.lower() in ("none", ""):
        if "None" in annotation:
            return None
        raise ConfigError(f"{name} cannot be empty")
    try:
        if annotation.startswith("int"):
            return int(raw)
        if annotation.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Dashes in keys
    are accepted as underscores."""
    types = {f.name: str(f.type) for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, types[key])
    return out


def resolve_map(name: str) -> str:
    """Map text from a file path or a bundled world name."""
    path = Path(name)
    if path.is_file():
        return path.read_text()
    if name in BUILTIN_MAPS:
        return resources.files("hierpeg").joinpath("maps", f"{name}.txt").read_text()
    raise ConfigError(f"map not found: {name} (bundled: {', '.join(BUILTIN_MAPS)})")
