"""Pipeline configuration files (``[section]`` headers, ``key = value`` lines)."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Mapping

from .errors import ConfigError
from .recognize import RecognitionConfig
from .rerank import AdjustmentConfig

RERANK_KEYS = tuple(f"{t}{j}{k}" for t in "gh" for j in "123" for k in "123") + (
    "penalty_condition",)
RECOGNIZE_KEYS = ("alpha", "beta", "t_nl", "theta", "gamma", "K")
TUNE_KEYS = ("target", "cap")
IO_KEYS = ("threads", "block_queries", "block_gallery")
SECTIONS: Dict[str, tuple] = {
    "rerank": RERANK_KEYS,
    "recognize": RECOGNIZE_KEYS,
    "tune": TUNE_KEYS,
    "io": IO_KEYS,
}
TARGETS = ("map_at_100", "gap")
DEFAULT_GRID_CAP = 10_000


@dataclass(frozen=True)
class TuneSettings:
    target: str = "map_at_100"
    cap: int = DEFAULT_GRID_CAP


@dataclass(frozen=True)
class IOSettings:
    threads: int = 1
    block_queries: int = 256
    block_gallery: int = 16384


@dataclass(frozen=True)
class PipelineConfig:
    rerank: AdjustmentConfig = field(default_factory=AdjustmentConfig)
    recognize: RecognitionConfig = field(default_factory=RecognitionConfig)
    tune: TuneSettings = field(default_factory=TuneSettings)
    io: IOSettings = field(default_factory=IOSettings)


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                  comment_prefixes=("#", ";"))
    p.optionxform = str  # keep "K" distinct from "k"
    return p


def read_sections(path: str | Path) -> Dict[str, Dict[str, str]]:
    """Raw ``{section: {key: value}}`` with unknown sections/keys rejected."""
    p = _parser()
    try:
        with open(path, encoding="utf-8") as fh:
            p.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: Dict[str, Dict[str, str]] = {}
    for section in p.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in p[section]:
            if key not in SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
        out[section] = dict(p[section])
    return out


def _int(value, name: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None


def _float(value, name: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None


def parse_value(section: str, key: str, value: str):
    """Convert one raw config string to the type its key expects."""
    value = value.strip()
    if section == "rerank":
        return value if key == "penalty_condition" else _float(value, key)
    if section == "recognize":
        return _int(value, key) if key in ("t_nl", "K") else _float(value, key)
    if section == "tune":
        return value if key == "target" else _int(value, key)
    return _int(value, key)


def rerank_config(values: Mapping[str, object], base: AdjustmentConfig | None = None
                  ) -> AdjustmentConfig:
    merged = (base or AdjustmentConfig()).as_dict()
    merged.update(values)
    return AdjustmentConfig.from_dict(merged)


def recognition_config(values: Mapping[str, object], base: RecognitionConfig | None = None
                       ) -> RecognitionConfig:
    return replace(base or RecognitionConfig(), **values)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    raw = read_sections(path)
    typed = {s: {k: parse_value(s, k, v) for k, v in kv.items()} for s, kv in raw.items()}
    tune = TuneSettings(**typed.get("tune", {}))
    if tune.target not in TARGETS:
        raise ConfigError(f"tune target must be one of {TARGETS}, got {tune.target!r}")
    io = IOSettings(**typed.get("io", {}))
    if min(io.threads, io.block_queries, io.block_gallery) < 1:
        raise ConfigError("[io] values must be positive")
    return PipelineConfig(
        rerank=rerank_config(typed.get("rerank", {})),
        recognize=recognition_config(typed.get("recognize", {})),
        tune=tune,
        io=io,
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_sections(sections: Mapping[str, Mapping[str, object]]) -> str:
    lines = []
    for section, values in sections.items():
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in values.items())
    return "\n".join(lines) + "\n"


def write_config(sections: Mapping[str, Mapping[str, object]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_sections(sections))
