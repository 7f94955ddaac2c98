"""Flat ``key = value`` stage config files validated against ``stage_schema.txt``."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .train import STAGE_DEFAULTS, StageConfig

_CASTS = {
    "int": int,
    "float": float,
    "str": str,
    "path": str,
    "groups": lambda s: frozenset(g.strip() for g in s.split(",") if g.strip()),
}


def load_schema() -> dict:
    """``key -> (type, default-or-None, description)``."""
    text = resources.files("loopgen").joinpath("stage_schema.txt").read_text()
    schema = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, typ, default, desc = line.split(None, 3)
        schema[key] = (typ, None if default == "-" else default, desc)
    return schema


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    schema = load_schema()
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in schema:
            raise ConfigError(f"{origin}:{n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{n}: duplicate key {key!r}")
        try:
            values[key] = _CASTS[schema[key][0]](value)
        except ValueError:
            raise ConfigError(f"{origin}:{n}: {key} expects {schema[key][0]}, got {value!r}") from None
    return values


def load_stage_config(path=None, **overrides) -> StageConfig:
    """Build a :class:`StageConfig` from a file, then apply non-None ``overrides``.

    Relative ``manifest`` and ``out_dir`` values resolve against the file's directory.
    """
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values = parse_config_text(text, str(path))
        for key in ("manifest", "out_dir"):
            if key in values and not Path(values[key]).is_absolute():
                values[key] = str(path.parent / values[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    stage = values.pop("stage", 1)
    if stage not in STAGE_DEFAULTS:
        raise ConfigError(f"stage must be 1, 2 or 3, got {stage}")
    return StageConfig.for_stage(stage, **values)
