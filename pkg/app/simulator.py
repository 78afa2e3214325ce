import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .belady import BeladyPolicy
from .cache import CacheHierarchy, SimEvent, filter_llc_stream, write_event_log
from .config import ConfigError, RunConfig, config_digest
from .metrics import ReuseHistogram, SimReport, emit, reuse_distance_profile, summarize
from .pairwise import PairwiseManager
from .replacement import (
    ORACLE_PREFIX,
    IOraclePolicy,
    ReplacementPolicy,
    make_online_policy,
    validate_policy_name,
)
from .trace import GENERATORS, MemoryAccess, read_trace

logger = logging.getLogger(__name__)


# ============================================================
# Policy construction
# ============================================================
def needs_future(name: str) -> bool:
    return name.removeprefix(ORACLE_PREFIX) == "belady"


def build_policy(name: str, future_lines: Optional[Sequence[int]] = None) -> ReplacementPolicy:
    validate_policy_name(name)
    if needs_future(name):
        if future_lines is None:
            raise ValueError("the belady policy needs the LLC demand stream")
        oracle = BeladyPolicy(future_lines)
        if name.startswith(ORACLE_PREFIX):
            return IOraclePolicy(oracle)
        return oracle
    return make_online_policy(name)


# ============================================================
# Trace source
# ============================================================
def load_stream(cfg: RunConfig) -> List[MemoryAccess]:
    if cfg.trace:
        return read_trace(cfg.trace)
    if cfg.generator:
        return GENERATORS[cfg.generator](cfg.trace_gen)
    raise ConfigError("a run needs either a trace path or a generator block", "trace")


def core_count(stream: Sequence[MemoryAccess], cfg: RunConfig) -> int:
    if not cfg.trace and cfg.generator:
        return cfg.trace_gen.cores
    return max((acc.core_id for acc in stream), default=0) + 1


# ============================================================
# Single run
# ============================================================
@dataclass
class RunResult:
    config: RunConfig
    digest: str
    hierarchy: CacheHierarchy
    events: List[SimEvent]
    records: int
    pairwise: Optional[PairwiseManager] = None
    reuse: Optional[ReuseHistogram] = None
    _report: Optional[SimReport] = field(default=None, repr=False)

    @property
    def report(self) -> SimReport:
        if self._report is None:
            self._report = summarize(self)
        return self._report


def simulate(cfg: RunConfig, stream: Optional[Sequence[MemoryAccess]] = None) -> RunResult:
    """One deterministic run: same config and trace, same result."""
    digest = config_digest(cfg)
    stream = load_stream(cfg) if stream is None else stream
    cores = core_count(stream, cfg)

    llc_stream = None
    if needs_future(cfg.policy) or cfg.metrics.reuse_profile:
        llc_stream = filter_llc_stream(stream, cfg.hierarchy, cores)
    policy = build_policy(cfg.policy, [d.line for d in llc_stream] if llc_stream is not None else None)

    manager = PairwiseManager(cfg.pairwise, cores) if cfg.pairwise.enabled else None
    hierarchy = CacheHierarchy(cfg.hierarchy, policy, cores, manager)

    logger.info("run %s: %d records, %d cores, policy %s%s",
                digest, len(stream), cores, cfg.policy, " + pairwise" if manager else "")
    events = [hierarchy.access(acc).event for acc in stream]
    hierarchy.check_invariants()

    reuse = None
    if cfg.metrics.reuse_profile:
        reuse = reuse_distance_profile(llc_stream, hierarchy.llc.n_sets)

    result = RunResult(cfg, digest, hierarchy, events, len(stream), manager, reuse)
    s = hierarchy.stats
    logger.info("run %s done: llc instr %d/%d hits, llc data %d/%d hits",
                digest, s.instruction.llc_hits, s.instruction.llc_accesses,
                s.data.llc_hits, s.data.llc_accesses)
    return result


def write_outputs(result: RunResult, out_dir, fmt: Optional[str] = None) -> Dict[str, Path]:
    """Report plus the optional event log and pair-table dump, all tagged with the digest."""
    cfg = result.config
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = fmt or cfg.emit

    paths = {"report": emit(result.report, fmt, out_dir / f"report.{fmt}")}
    if cfg.metrics.dump_events:
        paths["events"] = out_dir / "events.log"
        write_event_log(paths["events"], result.events, result.digest)
    if cfg.metrics.dump_pairtable and result.pairwise is not None:
        paths["pairtable"] = out_dir / "pairtable.txt"
        paths["pairtable"].write_text(f"# config_digest {result.digest}\n{result.pairwise.dump()}\n")
    return paths
