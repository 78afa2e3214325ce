import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .pairwise import FillClass, HelperTable, PairwiseConfig, PairwiseManager, Protection
from .replacement import CacheRequest, LRUPolicy, ReplacementPolicy
from .trace import LINE_BYTES, LINE_SHIFT, AccessKind, MemoryAccess

logger = logging.getLogger(__name__)

EVENT_LOG_HEADER = "#PLLC-EVENTS 1"


class InvariantViolation(RuntimeError):
    """Simulator bookkeeping no longer adds up; the run is aborted."""


class Level(IntEnum):
    PRIVATE = 0
    LLC = 1
    MEMORY = 2


# ============================================================
# Geometry / configuration
# ============================================================
@dataclass(frozen=True)
class CacheGeometry:
    capacity_bytes: int
    associativity: int
    line_bytes: int = LINE_BYTES

    @property
    def n_sets(self) -> int:
        return self.capacity_bytes // (self.associativity * self.line_bytes)

    def validate(self, name: str = "cache") -> None:
        if self.associativity <= 0 or self.capacity_bytes <= 0:
            raise ValueError(f"{name}: capacity and associativity must be positive")
        if self.capacity_bytes % (self.associativity * self.line_bytes):
            raise ValueError(
                f"{name}: capacity {self.capacity_bytes} is not a multiple of "
                f"{self.associativity} ways x {self.line_bytes}B")
        n = self.n_sets
        if n & (n - 1):
            raise ValueError(f"{name}: set count {n} is not a power of two")


@dataclass(frozen=True)
class CacheLevelConfig:
    capacity_bytes: int
    associativity: int
    latency: int

    @property
    def geometry(self) -> CacheGeometry:
        return CacheGeometry(self.capacity_bytes, self.associativity)


@dataclass(frozen=True)
class HierarchyConfig:
    private: CacheLevelConfig = CacheLevelConfig(128 * 1024, 8, 3)
    llc: CacheLevelConfig = CacheLevelConfig(1536 * 1024, 12, 40)
    memory_latency: int = 147
    next_line_degree: int = 0

    def validate(self) -> None:
        self.private.geometry.validate("private")
        self.llc.geometry.validate("llc")
        for name, value in (("private.latency", self.private.latency),
                            ("llc.latency", self.llc.latency),
                            ("memory_latency", self.memory_latency),
                            ("next_line_degree", self.next_line_degree)):
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    def latency_of(self, level: Level) -> int:
        """Latencies add up level by level."""
        total = self.private.latency
        if level >= Level.LLC:
            total += self.llc.latency
        if level >= Level.MEMORY:
            total += self.memory_latency
        return total


# ============================================================
# Set-associative storage
# ============================================================
@dataclass(slots=True)
class CacheLine:
    line: int = -1
    valid: bool = False
    dirty: bool = False
    is_instruction: bool = False
    is_prefetched: bool = False
    prefetch_source: str = ""


class SetAssociativeCache:
    def __init__(self, geometry: CacheGeometry, policy: ReplacementPolicy):
        geometry.validate()
        self.geometry = geometry
        self.n_sets = geometry.n_sets
        self.ways = geometry.associativity
        self.policy = policy.bind(self.n_sets, self.ways)
        self.sets = [[CacheLine() for _ in range(self.ways)] for _ in range(self.n_sets)]
        self._where: Dict[int, int] = {}

    def set_index(self, line: int) -> int:
        return line & (self.n_sets - 1)

    def lookup(self, line: int) -> Optional[int]:
        """Way holding `line`, or None."""
        return self._where.get(line)

    def block(self, line: int) -> Optional[CacheLine]:
        way = self._where.get(line)
        return None if way is None else self.sets[self.set_index(line)][way]

    def free_way(self, set_idx: int) -> Optional[int]:
        for w, blk in enumerate(self.sets[set_idx]):
            if not blk.valid:
                return w
        return None

    def install(self, set_idx: int, way: int, line: int, **flags) -> CacheLine:
        blk = self.sets[set_idx][way]
        if blk.valid:
            raise InvariantViolation(f"install over valid line {blk.line:#x} in set {set_idx}")
        blk.line, blk.valid = line, True
        blk.dirty = flags.get("dirty", False)
        blk.is_instruction = flags.get("is_instruction", False)
        blk.is_prefetched = flags.get("is_prefetched", False)
        blk.prefetch_source = flags.get("prefetch_source", "")
        self._where[line] = way
        return blk

    def evict(self, set_idx: int, way: int) -> CacheLine:
        blk = self.sets[set_idx][way]
        gone = CacheLine(blk.line, True, blk.dirty, blk.is_instruction,
                         blk.is_prefetched, blk.prefetch_source)
        self.policy.on_evict(set_idx, way)
        del self._where[blk.line]
        blk.valid, blk.line = False, -1
        return gone

    def access(self, req: CacheRequest, dirty: bool = False) -> Tuple[bool, Optional[CacheLine]]:
        """
        Plain lookup-and-fill with the bound policy (no protection queries).
        Returns (hit, evicted line). A bypassed fill reports (False, None).
        """
        s = self.set_index(req.line)
        way = self.lookup(req.line)
        if way is not None:
            self.policy.on_hit(s, way, req)
            if dirty:
                self.sets[s][way].dirty = True
            return True, None

        victim = None
        way = self.free_way(s)
        if way is None:
            if self.policy.should_bypass(s, req):
                return False, None
            way = self.policy.choose_victim(s, req)[0]
            victim = self.evict(s, way)
        self.install(s, way, req.line, dirty=dirty, is_instruction=req.is_instruction)
        self.policy.on_fill(s, way, req)
        return False, victim

    def resident_lines(self) -> List[int]:
        return sorted(self._where)


class PrivateCaches:
    """One LRU cache per core; shared by the full hierarchy and the LLC-stream filter."""

    def __init__(self, cfg: CacheLevelConfig, cores: int):
        self.caches = [SetAssociativeCache(cfg.geometry, LRUPolicy()) for _ in range(cores)]

    def access(self, acc: MemoryAccess) -> Tuple[bool, Optional[CacheLine]]:
        req = CacheRequest(acc.line, acc.pc, acc.core_id, acc.is_instruction)
        return self.caches[acc.core_id].access(req, dirty=acc.kind == AccessKind.STORE)


# ============================================================
# Events / counters
# ============================================================
@dataclass(slots=True)
class SimEvent:
    seq: int
    core: int
    kind: int
    level: int
    latency: int
    line: int
    pc: int
    victim: int = -1
    victim_is_instruction: bool = False
    pair_line: int = -1
    prefetched_hit: bool = False

    @property
    def is_instruction(self) -> bool:
        return self.kind == AccessKind.IFETCH


@dataclass
class ClassCounters:
    accesses: int = 0
    private_hits: int = 0
    llc_hits: int = 0
    memory_fills: int = 0

    @property
    def llc_accesses(self) -> int:
        return self.llc_hits + self.memory_fills


@dataclass
class HierarchyStats:
    instruction: ClassCounters = field(default_factory=ClassCounters)
    data: ClassCounters = field(default_factory=ClassCounters)
    prefetch_issued: Dict[str, int] = field(default_factory=lambda: {"pairwise": 0, "next_line": 0})
    prefetch_useful: Dict[str, int] = field(default_factory=lambda: {"pairwise": 0, "next_line": 0})
    prefetch_unused: int = 0
    prefetch_dropped: int = 0
    prefetch_as_instruction: int = 0
    protections: int = 0
    qbs_cycles: int = 0
    llc_bypasses: int = 0
    writebacks_to_llc: int = 0
    writebacks_to_memory: int = 0
    llc_instruction_evictions: int = 0
    llc_data_evictions: int = 0

    def of(self, is_instruction: bool) -> ClassCounters:
        return self.instruction if is_instruction else self.data


@dataclass(slots=True)
class AccessOutcome:
    level: Level
    latency: int
    event: SimEvent
    prefetches: List[int] = field(default_factory=list)


# ============================================================
# Two-level hierarchy
# ============================================================
class CacheHierarchy:
    def __init__(
        self,
        cfg: HierarchyConfig,
        policy: ReplacementPolicy,
        cores: int,
        pairwise: Optional[PairwiseManager] = None,
        attribution: Optional[PairwiseConfig] = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.cores = cores
        self.private = PrivateCaches(cfg.private, cores)
        self.llc = SetAssociativeCache(cfg.llc.geometry, policy)
        self.policy = self.llc.policy
        self.pairwise = pairwise
        helper_cfg = attribution or (pairwise.cfg if pairwise else PairwiseConfig())
        # always-on PC->instruction-line tables used only to label data events
        self.attribution = [HelperTable(helper_cfg.helper_entries, helper_cfg.helper_ways)
                            for _ in range(cores)]
        self.pinned: set = set()
        self.stats = HierarchyStats()
        self.llc_index = -1
        logger.debug("hierarchy: %d cores, private %d sets x %d, llc %d sets x %d (%s)",
                     cores, self.private.caches[0].n_sets, cfg.private.associativity,
                     self.llc.n_sets, self.llc.ways, self.policy.name)

    # --------------------------------------------------------
    def access(self, acc: MemoryAccess) -> AccessOutcome:
        if not 0 <= acc.core_id < self.cores:
            raise InvariantViolation(f"record {acc.seq}: core {acc.core_id} outside 0..{self.cores - 1}")
        is_instr = acc.is_instruction
        counters = self.stats.of(is_instr)
        counters.accesses += 1

        hit, private_victim = self.private.access(acc)
        event = SimEvent(acc.seq, acc.core_id, int(acc.kind), Level.PRIVATE, 0, acc.line, acc.pc)
        outcome = AccessOutcome(Level.PRIVATE, 0, event)
        if hit:
            counters.private_hits += 1
        else:
            self._llc_demand(acc, outcome)
            if private_victim is not None and private_victim.dirty:
                self._writeback(private_victim.line, acc.core_id)

        outcome.latency += self.cfg.latency_of(outcome.level)
        event.level, event.latency = int(outcome.level), outcome.latency
        return outcome

    def _writeback(self, line: int, core: int) -> None:
        """Dirty private victim; never promoted, never seen by the pair table."""
        blk = self.llc.block(line)
        if blk is not None:
            blk.dirty = True
            self.stats.writebacks_to_llc += 1
            return

        # installed at the policy's low-priority (prefetch) insertion point
        req = CacheRequest(line, 0, core, False, True, -1)
        self._llc_fill(req, dirty=True)
        if self.llc.lookup(line) is None:
            self.stats.writebacks_to_memory += 1
        else:
            self.stats.writebacks_to_llc += 1

    # --------------------------------------------------------
    def _llc_demand(self, acc: MemoryAccess, outcome: AccessOutcome) -> None:
        self.llc_index += 1
        line, is_instr = acc.line, acc.is_instruction
        req = CacheRequest(line, acc.pc, acc.core_id, is_instr, False, self.llc_index)
        event = outcome.event
        counters = self.stats.of(is_instr)

        if is_instr and self.policy.pins_instructions:
            hit = line in self.pinned
            self.pinned.add(line)
        else:
            s = self.llc.set_index(line)
            way = self.llc.lookup(line)
            hit = way is not None
            if hit:
                self.policy.on_hit(s, way, req)
                blk = self.llc.sets[s][way]
                if blk.is_prefetched:
                    blk.is_prefetched = False
                    event.prefetched_hit = True
                    self.stats.prefetch_useful[blk.prefetch_source] += 1
            else:
                victim, cycles = self._llc_fill(req)
                outcome.latency += cycles
                if victim is not None:
                    event.victim, event.victim_is_instruction = victim.line, victim.is_instruction

        if hit:
            counters.llc_hits += 1
            outcome.level = Level.LLC
        else:
            counters.memory_fills += 1
            outcome.level = Level.MEMORY

        pa = line << LINE_SHIFT
        if is_instr:
            self.attribution[acc.core_id].record(acc.pc >> 12, pa >> 12)
        else:
            il_pa = self.attribution[acc.core_id].deduce(acc.pc)
            event.pair_line = -1 if il_pa is None else il_pa >> LINE_SHIFT

        candidates: List[Tuple[int, str]] = []
        if self.pairwise is not None:
            if is_instr:
                candidates = [(p, "pairwise") for p in
                              self.pairwise.on_llc_ifetch(acc.core_id, acc.pc, pa, hit)]
            else:
                self.pairwise.on_llc_data_access(acc.core_id, acc.pc, pa, hit)
            self.pairwise.color_tick(acc.core_id, is_instr, acc.pc, hit)
        if not is_instr and not hit:
            candidates += [((line + d) << LINE_SHIFT, "next_line")
                           for d in range(1, self.cfg.next_line_degree + 1)]

        for p, source in candidates:
            if self._prefetch(p, acc, source):
                outcome.prefetches.append(p)

    def _prefetch(self, pa: int, acc: MemoryAccess, source: str) -> bool:
        line = pa >> LINE_SHIFT
        if self.llc.lookup(line) is not None or line in self.pinned:
            self.stats.prefetch_dropped += 1
            return False

        as_instr = False
        if self.pairwise is not None and self.pairwise.on_prefetch_fill(pa) is FillClass.PROTECT_AS_INSTRUCTION:
            as_instr = True
            self.stats.prefetch_as_instruction += 1
        req = CacheRequest(line, acc.pc, acc.core_id, as_instr, True, -1)
        victim, _ = self._llc_fill(req, prefetch_source=source)
        if victim is None and self.llc.lookup(line) is None:
            return False
        self.stats.prefetch_issued[source] += 1
        return True

    def _llc_fill(
        self,
        req: CacheRequest,
        prefetch_source: str = "",
        dirty: bool = False,
    ) -> Tuple[Optional[CacheLine], int]:
        s = self.llc.set_index(req.line)
        way = self.llc.free_way(s)
        victim, cycles = None, 0
        if way is None:
            if self.policy.should_bypass(s, req):
                self.stats.llc_bypasses += 1
                return None, 0
            way, cycles = self._select_victim(s, req)
            victim = self.llc.evict(s, way)
            self._count_eviction(victim)

        self.llc.install(s, way, req.line, dirty=dirty, is_instruction=req.is_instruction,
                         is_prefetched=bool(prefetch_source), prefetch_source=prefetch_source)
        self.policy.on_fill(s, way, req)
        return victim, cycles

    def _count_eviction(self, victim: CacheLine) -> None:
        if victim.is_instruction:
            self.stats.llc_instruction_evictions += 1
        else:
            self.stats.llc_data_evictions += 1
        if victim.is_prefetched:
            self.stats.prefetch_unused += 1
        if victim.dirty:
            self.stats.writebacks_to_memory += 1

    def _select_victim(self, set_idx: int, req: CacheRequest) -> Tuple[int, int]:
        """Walk the policy's candidates, asking the pair table about instruction lines."""
        order = self.policy.choose_victim(set_idx, req)
        if self.pairwise is None:
            return order[0], 0

        cfg = self.pairwise.cfg
        protected = cycles = 0
        for way in order:
            blk = self.llc.sets[set_idx][way]
            if blk.is_instruction and protected < cfg.qbs_max_attempts:
                cycles += cfg.qbs_lookup_cost
                if self.pairwise.query_protect(blk.line << LINE_SHIFT) is Protection.PROTECT:
                    protected += 1
                    self.policy.on_protect(set_idx, way)
                    continue
            break
        else:
            way = order[0]

        self.stats.protections += protected
        self.stats.qbs_cycles += cycles
        return way, cycles

    # --------------------------------------------------------
    def check_invariants(self) -> None:
        for name, c in (("instruction", self.stats.instruction), ("data", self.stats.data)):
            if c.accesses != c.private_hits + c.llc_hits + c.memory_fills:
                raise InvariantViolation(
                    f"{name} accounting: {c.accesses} accesses != {c.private_hits} private hits "
                    f"+ {c.llc_hits} llc hits + {c.memory_fills} memory fills")
        for s, row in enumerate(self.llc.sets):
            lines = [b.line for b in row if b.valid]
            if len(lines) != len(set(lines)):
                raise InvariantViolation(f"llc set {s} holds a line twice")


# ============================================================
# LLC-only helpers
# ============================================================
@dataclass(slots=True)
class LLCDemand:
    line: int
    pc: int
    core: int
    is_instruction: bool


def filter_llc_stream(stream: Iterable[MemoryAccess], cfg: HierarchyConfig, cores: int) -> List[LLCDemand]:
    """LLC demand stream produced by the private caches alone."""
    private = PrivateCaches(cfg.private, cores)
    out = []
    for acc in stream:
        hit, _ = private.access(acc)
        if not hit:
            out.append(LLCDemand(acc.line, acc.pc, acc.core_id, acc.is_instruction))
    return out


@dataclass
class ReplayResult:
    hits: List[bool]
    victims: List[Optional[int]]

    @property
    def misses(self) -> int:
        return sum(1 for h in self.hits if not h)


def replay_llc(
    demands: Sequence[Union[int, LLCDemand]],
    geometry: CacheGeometry,
    policy: ReplacementPolicy,
) -> ReplayResult:
    """Drive a lone LLC with a demand stream (bare lines use pc 0, core 0)."""
    cache = SetAssociativeCache(geometry, policy)
    result = ReplayResult([], [])
    for i, d in enumerate(demands):
        if isinstance(d, LLCDemand):
            req = CacheRequest(d.line, d.pc, d.core, d.is_instruction, False, i)
        else:
            req = CacheRequest(int(d), 0, 0, False, False, i)
        hit, victim = cache.access(req)
        result.hits.append(hit)
        result.victims.append(None if victim is None else victim.line)
    return result


# ============================================================
# Stall estimate (serial per-core model)
# ============================================================
@dataclass
class CoreStalls:
    cycles: int = 0
    ifetch_stall: int = 0
    data_stall: int = 0
    first_data_done: Optional[int] = None


@dataclass
class StallEstimate:
    total_cycles: int = 0
    ifetch_stall_cycles: int = 0
    data_stall_cycles: int = 0
    per_core: Dict[int, CoreStalls] = field(default_factory=dict)


def estimate_stalls(events: Iterable[SimEvent], private_latency: int = 0) -> StallEstimate:
    """
    Each core issues its accesses back to back, so a data access completes only
    after the ifetch before it. Stall beyond a private hit is charged to the
    access's class.
    """
    est = StallEstimate()
    for ev in events:
        core = est.per_core.setdefault(ev.core, CoreStalls())
        stall = max(0, ev.latency - private_latency)
        core.cycles += ev.latency
        if ev.is_instruction:
            core.ifetch_stall += stall
        else:
            core.data_stall += stall
            if core.first_data_done is None:
                core.first_data_done = core.cycles
    for core in est.per_core.values():
        est.total_cycles += core.cycles
        est.ifetch_stall_cycles += core.ifetch_stall
        est.data_stall_cycles += core.data_stall
    return est


# ============================================================
# Event log
# ============================================================
def write_event_log(path, events: Iterable[SimEvent], digest: str = "") -> int:
    path = Path(path)
    n = 0
    with path.open("w") as fh:
        fh.write(EVENT_LOG_HEADER + "\n")
        if digest:
            fh.write(f"# config_digest {digest}\n")
        for ev in events:
            fh.write(f"{ev.seq} {ev.core} {ev.kind} {ev.level} {ev.latency} {ev.line:x} {ev.pc:x} "
                     f"{ev.victim} {int(ev.victim_is_instruction)} {ev.pair_line} "
                     f"{int(ev.prefetched_hit)}\n")
            n += 1
    logger.info("wrote %d events to %s", n, path)
    return n


def read_event_log(path) -> List[SimEvent]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != EVENT_LOG_HEADER:
            raise ValueError(f"{path}: not an event log (header {header!r})")
        events = []
        for lineno, raw in enumerate(fh, start=2):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 11:
                raise ValueError(f"{path}:{lineno}: expected 11 fields, got {len(parts)}")
            seq, core, kind, level, lat = (int(p) for p in parts[:5])
            events.append(SimEvent(seq, core, kind, level, lat, int(parts[5], 16), int(parts[6], 16),
                                   int(parts[7]), parts[8] == "1", int(parts[9]), parts[10] == "1"))
    return events
