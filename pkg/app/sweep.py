import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .cache import CacheLevelConfig
from .config import ConfigError, RunConfig
from .metrics import write_csv
from .simulator import load_stream, simulate
from .trace import MemoryAccess

logger = logging.getLogger(__name__)

SWEEP_AXES = ("k", "threshold_fixed", "pair_table_entries", "llc_capacity", "llc_associativity")

# documented ranges per axis (inclusive)
AXIS_RANGES = {
    "k": (0, 8),
    "threshold_fixed": (0, 63),
    "pair_table_entries": (1, 1 << 20),
    "llc_capacity": (0.5, 2.0),
    "llc_associativity": (6, 48),
}


def apply_point(cfg: RunConfig, axis: str, value: Any) -> RunConfig:
    """Config for one sweep point; everything but the axis stays fixed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; valid: {', '.join(SWEEP_AXES)}", "axis")
    lo, hi = AXIS_RANGES[axis]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not lo <= value <= hi:
        raise ConfigError(f"value {value!r} outside [{lo}, {hi}]", f"values.{axis}")

    pw, llc = cfg.pairwise, cfg.hierarchy.llc
    if axis == "k":
        pw = dataclasses.replace(pw, enabled=True, k=int(value))
    elif axis == "threshold_fixed":
        pw = dataclasses.replace(pw, enabled=True, threshold_init=int(value), threshold_step=0)
    elif axis == "pair_table_entries":
        pw = dataclasses.replace(pw, enabled=True, pair_table_entries=int(value))
    elif axis == "llc_capacity":
        capacity = int(llc.capacity_bytes * value)
        llc = CacheLevelConfig(capacity, llc.associativity, llc.latency)
    else:
        # capacity stays fixed; the set count absorbs the change
        llc = CacheLevelConfig(llc.capacity_bytes, int(value), llc.latency)

    hierarchy = dataclasses.replace(cfg.hierarchy, llc=llc)
    point = dataclasses.replace(cfg, pairwise=pw, hierarchy=hierarchy)
    for path, check in (("hierarchy", hierarchy.validate), ("pairwise", pw.validate)):
        try:
            check()
        except ValueError as exc:
            raise ConfigError(f"{axis}={value}: {exc}", path) from exc
    return point


def _run_point(args) -> Dict[str, Any]:
    cfg, axis, value, stream = args
    return simulate(cfg, stream).report.csv_row(axis, value)


def run_sweep(
    cfg: RunConfig,
    axis: str,
    values: Sequence[Any],
    parallel: int = 1,
    stream: Optional[Sequence[MemoryAccess]] = None,
) -> List[Dict[str, Any]]:
    """One CSV row per value, ordered by value."""
    if not values:
        raise ConfigError("a sweep needs at least one value", f"values.{axis}")
    points = [(apply_point(cfg, axis, v), axis, v) for v in sorted(values)]
    stream = load_stream(cfg) if stream is None else stream

    logger.info("sweep %s over %s (%d points, parallel=%d)", axis, list(sorted(values)), len(points), parallel)
    jobs = [(p, axis, v, stream) for p, _, v in points]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(job) for job in jobs]
    return rows


def write_sweep(rows: Sequence[Dict[str, Any]], path) -> Path:
    path = write_csv(rows, path)
    logger.info("sweep rows written to %s", path)
    return path
