"""Key-value config files.

Format::

    # comment
    [gen]
    image_size = 64
    N = 5

    [model]
    lr = 2e-4
    loss_3d = align

Sections ``[gen]`` and ``[model]`` map onto :class:`GenConfig` and
:class:`ModelConfig`; every dataclass field may appear.  Booleans accept
``true/false/1/0/yes/no``.  Unknown keys or sections are errors.
"""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .datagen.dataset import GenConfig
from .model import ModelConfig

SECTIONS = {"gen": GenConfig, "model": ModelConfig}


class ConfigError(ValueError):
    pass


def _coerce(cls, name: str, raw: str):
    hints = typing.get_type_hints(cls)
    if name not in hints:
        raise ConfigError(f"unknown key {name!r} for [{cls.__name__}]")
    tp = hints[name]
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw, 0)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        # tuples of ints, written comma separated
        if typing.get_origin(tp) is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    raise ConfigError(f"unsupported field type for {name}")


def parse(text: str) -> dict[str, dict[str, typing.Any]]:
    out: dict[str, dict] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside a section")
        key, val = (s.strip() for s in line.split("=", 1))
        out[section][key] = _coerce(SECTIONS[section], key, val)
    return out


def load(path: str | Path | None, seed: int | None = None) -> tuple[GenConfig, ModelConfig]:
    """Read a config file (``None`` gives defaults); ``seed`` overrides both sections."""
    parsed = parse(Path(path).read_text()) if path is not None else {}
    gen = GenConfig(**parsed.get("gen", {}))
    model = ModelConfig(**parsed.get("model", {}))
    if seed is not None:
        gen.seed = seed
        model.seed = seed
    return gen, model


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def dump_section(name: str, obj) -> str:
    lines = [f"[{name}]"]
    for f in dataclasses.fields(obj):
        lines.append(f"{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def dumps(gen: GenConfig | None = None, model: ModelConfig | None = None) -> str:
    parts = []
    if gen is not None:
        parts.append(dump_section("gen", gen))
    if model is not None:
        parts.append(dump_section("model", model))
    return "\n".join(parts)
