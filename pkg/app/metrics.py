import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from .cache import InvariantViolation, LLCDemand, Level, SimEvent, estimate_stalls

if TYPE_CHECKING:
    from .simulator import RunResult

logger = logging.getLogger(__name__)

CLASSES = ("instruction", "data")

CSV_SCHEMA_VERSION = 1
# column order is part of the CSV format; append only
CSV_COLUMNS = [
    "csv_schema", "config_digest", "policy", "pairwise", "axis", "value",
    "records",
    "instruction_accesses", "instruction_private_hits", "instruction_llc_hits", "instruction_llc_misses",
    "data_accesses", "data_private_hits", "data_llc_hits", "data_llc_misses",
    "instruction_access_ratio",
    "rate_given_data_hit", "rate_given_data_miss",
    "protect_queries", "protections_granted", "protections_denied",
    "prefetch_issued", "prefetch_useful",
    "total_cycles", "ifetch_stall_cycles", "data_stall_cycles",
    "final_threshold",
]


def _cls(is_instruction: bool) -> str:
    return "instruction" if is_instruction else "data"


def _mean(values) -> Optional[float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()) if arr.size else None


# ============================================================
# Reuse distance
# ============================================================
@dataclass
class ReuseHistogram:
    counts: Dict[str, Dict[int, int]] = field(default_factory=lambda: {c: {} for c in CLASSES})
    first_touch: Dict[str, int] = field(default_factory=lambda: {c: 0 for c in CLASSES})
    # mean over lines of each line's mean distance
    per_line_mean: Dict[str, Optional[float]] = field(default_factory=lambda: {c: None for c in CLASSES})
    # mean over every reuse, so hot lines weigh more
    weighted_mean: Dict[str, Optional[float]] = field(default_factory=lambda: {c: None for c in CLASSES})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "counts": {c: {str(d): n for d, n in sorted(h.items())} for c, h in self.counts.items()},
            "first_touch": dict(self.first_touch),
            "per_line_mean": dict(self.per_line_mean),
            "weighted_mean": dict(self.weighted_mean),
        }


def reuse_distance_profile(llc_stream: Iterable[LLCDemand], n_sets: int) -> ReuseHistogram:
    """
    Per set, the number of distinct other lines touched between consecutive
    touches of a line (LRU stack depth). First touches land in `first_touch`.
    """
    mask = n_sets - 1
    stacks: Dict[int, List[int]] = defaultdict(list)
    per_line: Dict[str, Dict[int, List[int]]] = {c: defaultdict(list) for c in CLASSES}
    hist = ReuseHistogram()

    for d in llc_stream:
        cls = _cls(d.is_instruction)
        stack = stacks[d.line & mask]
        try:
            depth = stack.index(d.line)
        except ValueError:
            hist.first_touch[cls] += 1
            stack.insert(0, d.line)
            continue
        del stack[depth]
        stack.insert(0, d.line)
        per_line[cls][d.line].append(depth)

    for cls in CLASSES:
        all_distances = [x for ds in per_line[cls].values() for x in ds]
        if not all_distances:
            continue
        values, counts = np.unique(np.asarray(all_distances, dtype=np.int64), return_counts=True)
        hist.counts[cls] = {int(v): int(n) for v, n in zip(values, counts)}
        hist.weighted_mean[cls] = _mean(all_distances)
        hist.per_line_mean[cls] = _mean([np.mean(ds) for ds in per_line[cls].values()])
    return hist


# ============================================================
# Access-pattern characterization
# ============================================================
def _llc_events(events: Iterable[SimEvent]) -> List[SimEvent]:
    return [ev for ev in events if ev.level >= Level.LLC]


def accesses_per_line(events: Iterable[SimEvent]) -> Dict[str, Optional[float]]:
    """Mean LLC accesses per distinct line over the whole run."""
    seen: Dict[str, Dict[int, int]] = {c: defaultdict(int) for c in CLASSES}
    for ev in _llc_events(events):
        seen[_cls(ev.is_instruction)][ev.line] += 1
    return {c: _mean(list(seen[c].values())) for c in CLASSES}


def instruction_access_ratio(events: Iterable[SimEvent]) -> Optional[float]:
    llc = _llc_events(events)
    if not llc:
        return None
    return sum(1 for ev in llc if ev.is_instruction) / len(llc)


def stream_profile(llc_stream: Sequence[LLCDemand]) -> Dict[str, Any]:
    """Instruction share and per-line access counts of an LLC demand stream."""
    seen: Dict[str, Dict[int, int]] = {c: defaultdict(int) for c in CLASSES}
    for d in llc_stream:
        seen[_cls(d.is_instruction)][d.line] += 1
    n_instr = sum(seen["instruction"].values())
    total = n_instr + sum(seen["data"].values())
    return {
        "llc_accesses": total,
        "instruction_access_ratio": n_instr / total if total else None,
        "accesses_per_line": {c: _mean(list(seen[c].values())) for c in CLASSES},
    }


@dataclass
class ConditionalMissRates:
    rate_given_data_hit: Optional[float] = None
    rate_given_data_miss: Optional[float] = None
    paired_with_hit: int = 0
    paired_with_miss: int = 0


def conditional_instruction_miss_rates(events: Iterable[SimEvent]) -> ConditionalMissRates:
    """
    Each LLC instruction access is paired with the next LLC data access by the
    same core attributed to that instruction line.
    """
    pending: Dict[int, Dict[int, bool]] = defaultdict(dict)
    tally = {True: [0, 0], False: [0, 0]}  # data hit? -> [instruction misses, pairs]

    for ev in _llc_events(events):
        if ev.is_instruction:
            pending[ev.core][ev.line] = ev.level == Level.MEMORY
            continue
        if ev.pair_line < 0:
            continue
        i_missed = pending[ev.core].pop(ev.pair_line, None)
        if i_missed is None:
            continue
        bucket = tally[ev.level == Level.LLC]
        bucket[0] += i_missed
        bucket[1] += 1

    out = ConditionalMissRates(paired_with_hit=tally[True][1], paired_with_miss=tally[False][1])
    if tally[True][1]:
        out.rate_given_data_hit = tally[True][0] / tally[True][1]
    if tally[False][1]:
        out.rate_given_data_miss = tally[False][0] / tally[False][1]
    return out


# ============================================================
# Report
# ============================================================
@dataclass
class SimReport:
    config_digest: str = ""
    policy: str = ""
    pairwise: bool = False
    records: int = 0
    levels: Dict[str, Dict[str, int]] = field(default_factory=dict)
    instruction_access_ratio: Optional[float] = None
    accesses_per_line: Dict[str, Optional[float]] = field(default_factory=dict)
    conditional_miss_rates: Dict[str, Any] = field(default_factory=dict)
    protections: Dict[str, int] = field(default_factory=dict)
    prefetch: Dict[str, Any] = field(default_factory=dict)
    stalls: Dict[str, int] = field(default_factory=dict)
    threshold_trajectory: List[Dict[str, Any]] = field(default_factory=list)
    storage: Dict[str, int] = field(default_factory=dict)
    reuse: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def csv_row(self, axis: str = "", value: Any = "") -> Dict[str, Any]:
        lv, rates = self.levels, self.conditional_miss_rates
        row = {
            "csv_schema": CSV_SCHEMA_VERSION, "config_digest": self.config_digest,
            "policy": self.policy, "pairwise": self.pairwise, "axis": axis, "value": value,
            "records": self.records,
            "instruction_access_ratio": self.instruction_access_ratio,
            "rate_given_data_hit": rates.get("rate_given_data_hit"),
            "rate_given_data_miss": rates.get("rate_given_data_miss"),
            "protect_queries": self.protections.get("queries", 0),
            "protections_granted": self.protections.get("granted", 0),
            "protections_denied": self.protections.get("denied", 0),
            "prefetch_issued": self.prefetch.get("issued", 0),
            "prefetch_useful": self.prefetch.get("useful", 0),
            "total_cycles": self.stalls.get("total_cycles", 0),
            "ifetch_stall_cycles": self.stalls.get("ifetch_stall_cycles", 0),
            "data_stall_cycles": self.stalls.get("data_stall_cycles", 0),
            "final_threshold": (self.threshold_trajectory[-1]["threshold_after"]
                                if self.threshold_trajectory else None),
        }
        for cls in CLASSES:
            c = lv.get(cls, {})
            row[f"{cls}_accesses"] = c.get("accesses", 0)
            row[f"{cls}_private_hits"] = c.get("private_hits", 0)
            row[f"{cls}_llc_hits"] = c.get("llc_hits", 0)
            row[f"{cls}_llc_misses"] = c.get("llc_misses", 0)
        return row


def summarize(run: "RunResult") -> SimReport:
    h = run.hierarchy
    stats = h.stats
    report = SimReport(
        config_digest=run.digest,
        policy=run.config.policy,
        pairwise=run.pairwise is not None,
        records=run.records,
    )

    for cls in CLASSES:
        c = getattr(stats, cls)
        report.levels[cls] = {
            "accesses": c.accesses,
            "private_hits": c.private_hits,
            "private_misses": c.accesses - c.private_hits,
            "llc_hits": c.llc_hits,
            "llc_misses": c.memory_fills,
        }

    events = run.events
    report.instruction_access_ratio = instruction_access_ratio(events)
    report.accesses_per_line = accesses_per_line(events)
    report.conditional_miss_rates = asdict(conditional_instruction_miss_rates(events))

    issued = sum(stats.prefetch_issued.values())
    useful = sum(stats.prefetch_useful.values())
    report.prefetch = {
        "issued": issued,
        "useful": useful,
        "by_source": {src: {"issued": stats.prefetch_issued[src], "useful": stats.prefetch_useful[src]}
                      for src in sorted(stats.prefetch_issued)},
        "unused_evicted": stats.prefetch_unused,
        "dropped": stats.prefetch_dropped,
        "filled_as_instruction": stats.prefetch_as_instruction,
    }

    if run.pairwise is not None:
        ps = run.pairwise.stats
        report.protections = {
            "queries": ps.queries,
            "granted": ps.protections_granted,
            "denied": ps.protections_denied,
            "qbs_cycles": stats.qbs_cycles,
        }
        report.threshold_trajectory = [
            {"color": r.color, "threshold_before": r.threshold_before,
             "threshold_after": r.threshold_after, "p_dmiss_given_imiss": r.p_dmiss_given_imiss, "miss_rate": r.miss_rate}
            for r in run.pairwise.color.trajectory
        ]
        bits = run.pairwise.storage_bits(h.cores)
        report.storage = {**{f"{k}_bits": v for k, v in bits.items()},
                          "total_bytes": math.ceil(sum(bits.values()) / 8)}
    else:
        report.protections = {"queries": 0, "granted": 0, "denied": 0, "qbs_cycles": 0}

    est = estimate_stalls(events, h.cfg.private.latency)
    report.stalls = {
        "total_cycles": est.total_cycles,
        "ifetch_stall_cycles": est.ifetch_stall_cycles,
        "data_stall_cycles": est.data_stall_cycles,
    }
    if run.reuse is not None:
        report.reuse = run.reuse.to_dict()

    if useful > issued:
        raise InvariantViolation(f"useful prefetches {useful} exceed issued {issued}")
    if report.protections["granted"] > report.protections["queries"]:
        raise InvariantViolation("protections granted exceed queries")
    return report


def emit(report: SimReport, fmt: str, path) -> Path:
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    elif fmt == "csv":
        write_csv([report.csv_row()], path)
    else:
        raise ValueError(f"unknown emit format {fmt!r}; valid: json, csv")
    logger.info("report written to %s", path)
    return path


def write_csv(rows: Sequence[Dict[str, Any]], path) -> Path:
    path = Path(path)
    pd.DataFrame(list(rows), columns=CSV_COLUMNS).to_csv(path, index=False)
    return path
