"""Exhaustive grid search over rerank or recognition parameters."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Sequence, Tuple

from .config import (
    DEFAULT_GRID_CAP,
    RECOGNIZE_KEYS,
    RERANK_KEYS,
    TARGETS,
    parse_value,
    read_sections,
    recognition_config,
    rerank_config,
)
from .errors import ConfigError, GridTooLargeError
from .metrics import gap, map_at_100
from .recognize import PreparedRecognition, RecognitionConfig
from .rerank import AdjustmentConfig, PreparedRerank

logger = logging.getLogger(__name__)

SECTION_FOR_TARGET = {"map_at_100": "rerank", "gap": "recognize"}


@dataclass
class Grid:
    """Candidate values per parameter, enumerated in the order given."""

    target: str
    params: Dict[str, List[object]] = field(default_factory=dict)
    cap: int = DEFAULT_GRID_CAP

    def __post_init__(self) -> None:
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}, got {self.target!r}")
        allowed = RERANK_KEYS if self.section == "rerank" else RECOGNIZE_KEYS
        for name, values in self.params.items():
            if name not in allowed:
                raise ConfigError(f"{name!r} is not a [{self.section}] parameter")
            if not values:
                raise ConfigError(f"grid parameter {name!r} has no candidates")
        if self.size > self.cap:
            raise GridTooLargeError(f"grid has {self.size} points, cap is {self.cap}")

    @property
    def section(self) -> str:
        return SECTION_FOR_TARGET[self.target]

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.params.values())

    def points(self) -> List[Dict[str, object]]:
        names = list(self.params)
        return [dict(zip(names, combo))
                for combo in itertools.product(*self.params.values())]


def load_grid(path: str | Path, target: str | None = None, cap: int | None = None) -> Grid:
    """Grid file: config syntax with comma-separated candidates per key.

    ``[tune] target`` and ``cap`` may be given in the file; explicit
    arguments win.
    """
    raw = read_sections(path)
    tune = raw.get("tune", {})
    target = target or tune.get("target", "map_at_100").strip()
    if target not in TARGETS:
        raise ConfigError(f"target must be one of {TARGETS}, got {target!r}")
    if cap is None:
        cap = parse_value("tune", "cap", tune["cap"]) if "cap" in tune else DEFAULT_GRID_CAP
    section = SECTION_FOR_TARGET[target]
    extra = set(raw) - {section, "tune"}
    if extra:
        raise ConfigError(f"{path}: sections {sorted(extra)} do not apply to target {target}")
    params = {key: [parse_value(section, key, v) for v in value.split(",") if v.strip()]
              for key, value in raw.get(section, {}).items()}
    return Grid(target, params, cap)


@dataclass
class TuneResult:
    best_params: Dict[str, object]
    best_config: object
    best_score: float
    table: List[Tuple[Dict[str, object], float]]


def grid_search(grid: Grid, evaluate: Callable[[Dict[str, object]], float], *,
                threads: int = 1) -> TuneResult:
    """Score every grid point; the first point (in enumeration order) with the
    maximum score wins."""
    points = grid.points()
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(evaluate, points))
    else:
        scores = [evaluate(p) for p in points]
    best = max(range(len(points)), key=lambda i: (scores[i], -i))
    logger.info("evaluated %d grid points in %.2fs, best %s = %.6f",
                len(points), time.perf_counter() - t0, grid.target, scores[best])
    return TuneResult(points[best], None, scores[best], list(zip(points, scores)))


def tune_rerank(grid: Grid, prepared: PreparedRerank, truth: Mapping[str, set],
                base: AdjustmentConfig | None = None, *, threads: int = 1) -> TuneResult:
    if grid.target != "map_at_100":
        raise ConfigError("rerank tuning targets map_at_100")

    def evaluate(params: Dict[str, object]) -> float:
        cfg = rerank_config(params, base)
        lists = prepared.apply_ids(cfg)
        return map_at_100(dict(zip(prepared.query_ids, lists)), truth)

    result = grid_search(grid, evaluate, threads=threads)
    result.best_config = rerank_config(result.best_params, base)
    return result


def tune_recognition(grid: Grid, prepared: PreparedRecognition, truth: Mapping[str, int],
                     base: RecognitionConfig | None = None, *,
                     threads: int = 1) -> TuneResult:
    if grid.target != "gap":
        raise ConfigError("recognition tuning targets gap")

    def evaluate(params: Dict[str, object]) -> float:
        return gap(prepared.run(recognition_config(params, base)), truth)

    result = grid_search(grid, evaluate, threads=threads)
    result.best_config = recognition_config(result.best_params, base)
    return result


def write_table(result: TuneResult, names: Sequence[str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join([*names, "score"]) + "\n")
        for params, score in result.table:
            fh.write(",".join([*(str(params[n]) for n in names), f"{score:.6f}"]) + "\n")
