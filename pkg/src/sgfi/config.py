"""Flat ``key = value`` config files mapped onto :class:`PipelineConfig`.

The format is one assignment per line; blank lines and ``#`` comments
(full-line or trailing) are ignored.  Values are coerced by the type of
the matching dataclass field: booleans accept ``true/false/yes/no/on/off``
and ``1/0``, tuple fields take comma-separated integers, everything else
goes through ``int``/``float``/``str``.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import fields, replace

from sgfi.pipeline import PipelineConfig


class ConfigError(ValueError):
    """A config file or override could not be parsed or applied."""


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings from a flat config document."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def _coerce(key: str, raw: str, default) -> object:
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if not parts:
                raise ValueError("empty tuple")
            return tuple(int(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def apply_overrides(cfg: PipelineConfig,
                    overrides: dict[str, str]) -> PipelineConfig:
    """Return a copy of ``cfg`` with the string overrides applied."""
    valid = {f.name for f in fields(PipelineConfig)}
    updates = {}
    for key, raw in overrides.items():
        if key not in valid:
            known = ", ".join(sorted(valid))
            raise ConfigError(f"unknown config key {key!r} (known keys: "
                              f"{known})")
        updates[key] = _coerce(key, raw, getattr(cfg, key))
    return replace(cfg, **updates)


def load_pipeline_config(path=None,
                         overrides: dict[str, str] | None = None
                         ) -> PipelineConfig:
    """Defaults, then the config file, then explicit overrides."""
    cfg = PipelineConfig()
    if path:
        cfg = apply_overrides(cfg, load_config_file(path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg
