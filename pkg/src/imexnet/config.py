"""Line-based ``key = value`` text with ``[section]`` headers.

Used for network configs and run manifests.  A network config looks like::

    input_channels = 1
    n_classes = 4
    size = 64
    mode = imex          # default for stages that do not set it
    h = 1.0

    [stage 0]
    width = 16
    layers = 4

    [stage 1]
    width = 32
    layers = 4

``#`` starts a comment.  Unknown keys are rejected.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .layers import NetworkSpec, StageSpec


class ConfigError(ValueError):
    """Malformed or unknown content in a config or manifest file."""


@dataclass
class Section:
    name: str
    values: dict
    lines: dict  # key -> line number, for error messages


_SECTION = re.compile(r"^\[([^\]]+)\]$")


def parse_sections(text: str, source: str = "<config>") -> list:
    """Split text into sections; keys before the first header go to section ``""``."""
    sections = [Section("", {}, {})]
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            sections.append(Section(m.group(1).strip(), {}, {}))
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{no}: empty key")
        sec = sections[-1]
        if key in sec.values:
            raise ConfigError(f"{source}:{no}: duplicate key {key!r}")
        sec.values[key] = value
        sec.lines[key] = no
    return sections


def _bool(s: str) -> bool:
    if s.lower() in ("true", "yes", "1"):
        return True
    if s.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


GLOBAL_KEYS = {"input_channels": int, "n_classes": int, "size": int, "init": str, "seed": int,
               "norm": _bool, "activation": str, "opening": int,
               # stage defaults
               "mode": str, "h": float, "kernel": int}
STAGE_KEYS = {"width": int, "layers": int, "mode": str, "h": float, "kernel": int}


def _typed(sec: Section, schema: dict, source: str) -> dict:
    out = {}
    for key, value in sec.values.items():
        where = f"{source}:{sec.lines[key]}"
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            out[key] = schema[key](value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    return out


def parse_network(text: str, source: str = "<config>") -> NetworkSpec:
    sections = parse_sections(text, source)
    top = _typed(sections[0], GLOBAL_KEYS, source)
    defaults = {k: top.pop(k) for k in ("mode", "h", "kernel") if k in top}
    stages = []
    for i, sec in enumerate(sections[1:]):
        if sec.name != f"stage {i}":
            raise ConfigError(f"{source}: expected section [stage {i}], got [{sec.name}]")
        vals = {**defaults, **_typed(sec, STAGE_KEYS, source)}
        for req in ("width", "layers"):
            if req not in vals:
                raise ConfigError(f"{source}: [stage {i}] is missing {req!r}")
        stages.append(vals)
    try:
        return NetworkSpec([StageSpec(**s) for s in stages], **top)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def format_network(net: NetworkSpec) -> str:
    """Canonical config text; ``parse_network(format_network(n)) == n``."""
    lines = [f"input_channels = {net.input_channels}", f"n_classes = {net.n_classes}",
             f"size = {net.size}", f"opening = {net.opening}", f"norm = {str(net.norm).lower()}",
             f"activation = {net.activation}", f"init = {net.init}", f"seed = {net.seed}"]
    for i, st in enumerate(net.stages):
        lines += ["", f"[stage {i}]", f"width = {st.width}", f"layers = {st.layers}",
                  f"mode = {st.mode}", f"h = {float(st.h)!r}", f"kernel = {st.kernel}"]
    return "\n".join(lines) + "\n"


def format_sections(sections: list) -> str:
    """Render ``[(name, {key: value})]`` as manifest text."""
    out = []
    for name, values in sections:
        if out:
            out.append("")
        if name:
            out.append(f"[{name}]")
        for k, v in values.items():
            out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"
