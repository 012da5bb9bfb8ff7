"""Run configuration: a flat ``key = value`` file with a version key."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .ahi import CountMode
from .errors import BadConfigValue, UnknownConfigKey

CONFIG_VERSION = 1


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    data_root: str = "data"
    out_dir: str = "out"
    sleep_model: str = ""       # default: <out_dir>/models/sleep.apnw
    resp_model: str = ""        # default: <out_dir>/models/resp.apnw
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    target_val_accuracy: float | None = None
    patience: int | None = None
    count_mode: str = CountMode.PER_MINUTE.value
    workers: int = 1
    export_features: bool = False

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def cache_dir(self) -> Path:
        return self.out / "cache"

    def model_path(self, task: str) -> Path:
        explicit = self.sleep_model if task == "sleep" else self.resp_model
        return Path(explicit) if explicit else self.out / "models" / f"{task}.apnw"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TYPES = {"version": int, "data_root": str, "out_dir": str, "sleep_model": str,
          "resp_model": str, "epochs": int, "batch_size": int, "lr": float, "seed": int,
          "val_fraction": float, "target_val_accuracy": float, "patience": int,
          "count_mode": str, "workers": int, "export_features": bool}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    if raw == "" and key in ("target_val_accuracy", "patience"):
        return None
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return kind(raw)
    except ValueError as exc:
        raise BadConfigValue(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.version != CONFIG_VERSION:
        raise BadConfigValue(f"unsupported config version {cfg.version}")
    if cfg.epochs < 1 or cfg.batch_size < 2 or cfg.workers < 1:
        raise BadConfigValue("epochs >= 1, batch_size >= 2 and workers >= 1 are required")
    if not 0 <= cfg.val_fraction < 1:
        raise BadConfigValue(f"val_fraction {cfg.val_fraction} outside [0, 1)")
    if cfg.lr < 0:
        raise BadConfigValue("lr must be non-negative")
    try:
        CountMode(cfg.count_mode)
    except ValueError as exc:
        raise BadConfigValue(f"count_mode must be per_minute or events, got {cfg.count_mode!r}") from exc
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  The version key is
    mandatory and unknown keys are rejected."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfigValue(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise UnknownConfigKey(f"line {n}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    if "version" not in values:
        raise BadConfigValue("config file lacks a version key")
    return validate(RunConfig(**values))


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BadConfigValue(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key in _FIELDS:
        v = getattr(cfg, key)
        lines.append(f"{key} = {'' if v is None else str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
