import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)


LINE_SHIFT = 6
PAGE_SHIFT = 12
PADDR_BITS = 44
LINES_PER_PAGE_MASK = (1 << (PAGE_SHIFT - LINE_SHIFT)) - 1

MISS_COST_MAX = 63
THRESHOLD_MAX = 63
SCTR_MAX = 7
SCTR_INIT = 4
FIELD_REPLACE_BELOW = 4
RECENT_MISS_PCS = 10

# widths used for storage accounting only
VPPN_BITS = 29
PPPN_BITS = 32
D_PFO_BITS = 6
SCTR_BITS = 3
MISS_COST_BITS = 6


class Protection(Enum):
    PROTECT = "protect"
    EVICT = "evict"


class FillClass(Enum):
    PROTECT_AS_INSTRUCTION = "protect_as_instruction"
    PLAIN = "plain"


def _log2(value: int, name: str) -> int:
    if value <= 0 or value & (value - 1):
        raise ValueError(f"{name} must be a power of two, got {value}")
    return value.bit_length() - 1


def xor_fold(value: int, bits: int) -> int:
    mask = (1 << bits) - 1
    folded = 0
    while value:
        folded ^= value & mask
        value >>= bits
    return folded


def aged_miss_cost(cost: int, last_color: int, current_color: int, color_bits: int) -> int:
    """Miss cost decayed by one per color period elapsed since `last_color`."""
    delta = (current_color - last_color) % (1 << color_bits)
    return max(0, cost - delta)


# ============================================================
# Configuration
# ============================================================
@dataclass(frozen=True)
class PairwiseConfig:
    enabled: bool = False
    k: int = 1
    pair_table_entries: int = 16384
    dppn_entries: int = 8192
    helper_entries: int = 128
    helper_ways: int = 4
    color_bits: int = 3
    period_n: int = 100_000
    threshold_init: int = 32
    threshold_step: int = 1
    threshold_margin: float = 0.05
    qbs_max_attempts: int = 2
    qbs_lookup_cost: int = 1

    def validate(self) -> None:
        if not 0 <= self.k <= 8:
            raise ValueError(f"k must be in [0, 8], got {self.k}")
        _log2(self.pair_table_entries, "pair_table_entries")
        _log2(self.dppn_entries, "dppn_entries")
        _log2(self.helper_entries, "helper_entries")
        if self.helper_entries % self.helper_ways:
            raise ValueError("helper_entries must be a multiple of helper_ways")
        _log2(self.helper_entries // self.helper_ways, "helper set count")
        if not 1 <= self.color_bits <= 8:
            raise ValueError(f"color_bits must be in [1, 8], got {self.color_bits}")
        if self.period_n <= 0:
            raise ValueError("period_n must be positive")
        if not 0 <= self.threshold_init <= THRESHOLD_MAX:
            raise ValueError(f"threshold_init must be in [0, {THRESHOLD_MAX}]")
        if self.threshold_step < 0 or self.threshold_margin < 0:
            raise ValueError("threshold_step and threshold_margin must be >= 0")
        if self.qbs_max_attempts < 0 or self.qbs_lookup_cost < 0:
            raise ValueError("qbs_max_attempts and qbs_lookup_cost must be >= 0")


# ============================================================
# Helper table (per core, PC page -> instruction physical page)
# ============================================================
@dataclass(slots=True)
class HelperEntry:
    vppn: int = 0
    pppn: int = 0
    valid: bool = False
    sctr: int = 0


class HelperTable:
    def __init__(self, entries: int = 128, ways: int = 4):
        self.ways = ways
        self.n_sets = entries // ways
        self.sets = [[HelperEntry() for _ in range(ways)] for _ in range(self.n_sets)]

    def index(self, vppn: int) -> int:
        return vppn & (self.n_sets - 1)

    def record(self, vppn: int, pppn: int) -> HelperEntry:
        row = self.sets[self.index(vppn)]
        for entry in row:
            if entry.valid and entry.vppn == vppn:
                if entry.pppn == pppn:
                    entry.sctr = min(SCTR_MAX, entry.sctr + 1)
                else:
                    entry.pppn, entry.sctr = pppn, 1
                return entry

        free = next((e for e in row if not e.valid), None)
        if free is None:
            for entry in row:
                entry.sctr = max(0, entry.sctr - 1)
            free = row[min(range(self.ways), key=lambda w: (row[w].sctr, w))]

        free.vppn, free.pppn, free.valid, free.sctr = vppn, pppn, True, 1
        return free

    def lookup(self, vppn: int) -> Optional[int]:
        for entry in self.sets[self.index(vppn)]:
            if entry.valid and entry.vppn == vppn:
                return entry.pppn
        return None

    def deduce(self, data_pc: int) -> Optional[int]:
        """Line-aligned physical address of the instruction at `data_pc`, if mapped."""
        pppn = self.lookup(data_pc >> PAGE_SHIFT)
        if pppn is None:
            return None
        return ((pppn << PAGE_SHIFT) | (data_pc & ((1 << PAGE_SHIFT) - 1))) >> LINE_SHIFT << LINE_SHIFT


# ============================================================
# D_PPN table (tagless, shared data page numbers)
# ============================================================
@dataclass(slots=True)
class DppnEntry:
    stored: int = 0  # page-number bits above the index
    sctr: int = 0
    valid: bool = False


class DppnTable:
    def __init__(self, entries: int = 8192):
        self.index_bits = _log2(entries, "dppn_entries")
        self.entries = [DppnEntry() for _ in range(entries)]

    def index(self, dppn: int) -> int:
        return xor_fold(dppn, self.index_bits)

    def page(self, idx: int) -> Optional[int]:
        """Rebuild the full page number from the slot index and its stored bits."""
        entry = self.entries[idx]
        if not entry.valid:
            return None
        high = entry.stored
        low = idx ^ xor_fold(high, self.index_bits)
        return (high << self.index_bits) | low

    def find(self, dppn: int) -> Optional[int]:
        idx = self.index(dppn)
        entry = self.entries[idx]
        if entry.valid and entry.stored == dppn >> self.index_bits:
            return idx
        return None

    def touch(self, idx: int) -> None:
        entry = self.entries[idx]
        entry.sctr = min(SCTR_MAX, entry.sctr + 1)

    def claim(self, dppn: int) -> Optional[int]:
        """Slot holding `dppn` after this call, or None if the incumbent survives."""
        idx = self.index(dppn)
        entry = self.entries[idx]
        stored = dppn >> self.index_bits
        if entry.valid and entry.stored == stored:
            self.touch(idx)
            return idx
        if entry.valid:
            entry.sctr = max(0, entry.sctr - 1)
            if entry.sctr > 0:
                return None
        entry.stored, entry.sctr, entry.valid = stored, SCTR_INIT, True
        return idx


# ============================================================
# Main pair table
# ============================================================
@dataclass(slots=True)
class DataLineField:
    d_pfo: int = 0
    d_ppn_idx: int = 0
    old_bit: bool = True
    sctr: int = 0
    valid: bool = False


@dataclass(slots=True)
class PairTableEntry:
    il_tag: int = 0
    miss_cost: int = 0
    color: int = 0
    valid: bool = False
    dl_fields: List[DataLineField] = field(default_factory=list)

    def arm(self) -> None:
        for f in self.dl_fields:
            f.old_bit = True


class PairTable:
    """Direct-mapped, indexed by an XOR-fold of the instruction line address."""

    def __init__(self, entries: int = 16384, k: int = 1):
        self.index_bits = _log2(entries, "pair_table_entries")
        self.k = k
        self.entries = [
            PairTableEntry(dl_fields=[DataLineField() for _ in range(k)]) for _ in range(entries)
        ]

    def locate(self, il_pa: int) -> Tuple[int, int]:
        line = il_pa >> LINE_SHIFT
        tag = line >> self.index_bits
        low = line & ((1 << self.index_bits) - 1)
        return low ^ xor_fold(tag, self.index_bits), tag

    def match(self, il_pa: int) -> Optional[PairTableEntry]:
        idx, tag = self.locate(il_pa)
        entry = self.entries[idx]
        return entry if entry.valid and entry.il_tag == tag else None

    def snapshot(self) -> List[Tuple]:
        """Comparable copy of every entry's mutable state."""
        return [
            (e.il_tag, e.miss_cost, e.color, e.valid,
             tuple((f.d_pfo, f.d_ppn_idx, f.old_bit, f.sctr, f.valid) for f in e.dl_fields))
            for e in self.entries
        ]


# ============================================================
# Coloring timer, threshold controller and PMU
# ============================================================
@dataclass
class PMUCounters:
    matched_data_hits: int = 0
    matched_data_total: int = 0
    total_llc_hits: int = 0
    total_llc_accesses: int = 0


@dataclass(frozen=True)
class PeriodRecord:
    color: int
    threshold_before: int
    threshold_after: int
    p_dmiss_given_imiss: Optional[float]
    miss_rate: Optional[float]


class ColorState:
    def __init__(self, cfg: PairwiseConfig, cores: int):
        self.cfg = cfg
        self.colors = 1 << cfg.color_bits
        self.timer = 0
        self.threshold = cfg.threshold_init
        self.accesses_in_period = 0
        self.pmu = PMUCounters()
        self.recent_miss_pcs: List[Deque[int]] = [deque(maxlen=RECENT_MISS_PCS) for _ in range(cores)]
        self.trajectory: List[PeriodRecord] = []

    def record_instruction_miss(self, core: int, pc: int) -> None:
        ring = self.recent_miss_pcs[core]
        line = pc >> LINE_SHIFT
        if line in ring:
            ring.remove(line)
        ring.append(line)

    def tick(self, core: int, is_instruction: bool, pc: int, hit: bool) -> bool:
        """Account one LLC access; True when it closed a color period."""
        pmu = self.pmu
        if not is_instruction and (pc >> LINE_SHIFT) in self.recent_miss_pcs[core]:
            pmu.matched_data_total += 1
            pmu.matched_data_hits += hit
        pmu.total_llc_accesses += 1
        pmu.total_llc_hits += hit

        self.accesses_in_period += 1
        if self.accesses_in_period >= self.cfg.period_n:
            self.end_period()
            return True
        return False

    def end_period(self) -> None:
        pmu = self.pmu
        before = self.threshold
        p = m = None
        if pmu.matched_data_total and pmu.total_llc_accesses:
            p = 1 - pmu.matched_data_hits / pmu.matched_data_total
            m = 1 - pmu.total_llc_hits / pmu.total_llc_accesses
            margin = self.cfg.threshold_margin
            if p < m * (1 - margin):
                self.threshold = max(0, self.threshold - self.cfg.threshold_step)
            elif p > m * (1 + margin):
                self.threshold = min(THRESHOLD_MAX, self.threshold + self.cfg.threshold_step)

        self.trajectory.append(PeriodRecord(self.timer, before, self.threshold, p, m))
        logger.debug("color %d closed: P=%s M=%s threshold %d -> %d",
                     self.timer, p, m, before, self.threshold)

        self.timer = (self.timer + 1) % self.colors
        self.accesses_in_period = 0
        self.pmu = PMUCounters()
        for ring in self.recent_miss_pcs:
            ring.clear()


# ============================================================
# Pairwise manager (the LLC-side layer)
# ============================================================
@dataclass
class PairwiseStats:
    queries: int = 0
    protections_granted: int = 0
    protections_denied: int = 0
    prefetch_candidates: int = 0
    entries_allocated: int = 0
    entries_preserved: int = 0
    helper_misses: int = 0


class PairwiseManager:
    def __init__(self, cfg: PairwiseConfig, cores: int):
        cfg.validate()
        self.cfg = cfg
        self.helpers = [HelperTable(cfg.helper_entries, cfg.helper_ways) for _ in range(cores)]
        self.table = PairTable(cfg.pair_table_entries, cfg.k)
        self.dppn = DppnTable(cfg.dppn_entries)
        self.color = ColorState(cfg, cores)
        self.stats = PairwiseStats()

    @property
    def current_color(self) -> int:
        return self.color.timer

    @property
    def threshold(self) -> int:
        return self.color.threshold

    def _aged(self, entry: PairTableEntry, current_color: int) -> int:
        return aged_miss_cost(entry.miss_cost, entry.color, current_color, self.cfg.color_bits)

    # --------------------------------------------------------
    # Instruction side
    # --------------------------------------------------------
    def on_llc_ifetch(self, core: int, pc: int, il_pa: int, hit: bool) -> List[int]:
        """Track PC->IL page; on a miss arm the entry and return pairwise prefetches."""
        self.helpers[core].record(pc >> PAGE_SHIFT, il_pa >> PAGE_SHIFT)
        if hit:
            return []

        self.color.record_instruction_miss(core, pc)
        entry = self.table.match(il_pa)
        if entry is not None:
            entry.arm()
        return self.pairwise_prefetch_check(il_pa)

    def deduce_il_pa(self, core: int, data_pc: int) -> Optional[int]:
        return self.helpers[core].deduce(data_pc)

    # --------------------------------------------------------
    # Data side
    # --------------------------------------------------------
    def on_llc_data_access(
        self,
        core: int,
        data_pc: int,
        dl_pa: int,
        hit: bool,
        is_prefetch_fill: bool = False,
    ) -> None:
        if is_prefetch_fill:
            return
        il_pa = self.deduce_il_pa(core, data_pc)
        if il_pa is None:
            self.stats.helper_misses += 1
            return

        idx, tag = self.table.locate(il_pa)
        entry = self.table.entries[idx]
        color = self.current_color

        if entry.valid and entry.il_tag == tag:
            if hit:
                entry.miss_cost = min(MISS_COST_MAX, entry.miss_cost + 1)
            else:
                entry.miss_cost = max(0, entry.miss_cost - 1)
            if entry.color != color:
                entry.color = color
                entry.arm()
            self._record_field(entry, dl_pa)
            return

        if not entry.valid or self.pair_entry_replace(idx, il_pa, color):
            if not entry.valid:
                self._install(entry, tag, color)
            self._record_field(entry, dl_pa)

    def _install(self, entry: PairTableEntry, tag: int, color: int) -> None:
        entry.il_tag, entry.miss_cost, entry.color, entry.valid = (
            tag, self.cfg.threshold_init, color, True)
        for f in entry.dl_fields:
            f.d_pfo, f.d_ppn_idx, f.old_bit, f.sctr, f.valid = 0, 0, True, 0, False
        self.stats.entries_allocated += 1

    def pair_entry_replace(self, slot: int, new_il_pa: int, current_color: int) -> bool:
        """Resolve a tag conflict at `slot`; True if the new line took the slot."""
        entry = self.table.entries[slot]
        aged = self._aged(entry, current_color)
        if aged > self.threshold:
            entry.miss_cost = aged
            if entry.color != current_color:
                entry.color = current_color
                entry.arm()
            self.stats.entries_preserved += 1
            return False

        _, tag = self.table.locate(new_il_pa)
        self._install(entry, tag, current_color)
        return True

    def _record_field(self, entry: PairTableEntry, dl_pa: int) -> None:
        if not entry.dl_fields:
            return
        dppn = dl_pa >> PAGE_SHIFT
        pfo = (dl_pa >> LINE_SHIFT) & LINES_PER_PAGE_MASK

        slot = self.dppn.find(dppn)
        if slot is not None:
            for f in entry.dl_fields:
                if f.valid and f.d_ppn_idx == slot and f.d_pfo == pfo:
                    f.sctr = min(SCTR_MAX, f.sctr + 1)
                    f.old_bit = False
                    self.dppn.touch(slot)
                    return

        armed = next((f for f in entry.dl_fields if f.old_bit), None)
        if armed is None:
            return
        armed.old_bit = False
        if armed.sctr >= FIELD_REPLACE_BELOW:
            armed.sctr -= 1
            return

        slot = self.dppn.claim(dppn)
        if slot is None:
            return
        armed.d_pfo, armed.d_ppn_idx, armed.sctr, armed.valid = pfo, slot, SCTR_INIT, True

    # --------------------------------------------------------
    # Replacement-time query and prefetch
    # --------------------------------------------------------
    def query_protect(self, il_pa: int, current_color: Optional[int] = None) -> Protection:
        """Read-only: never touches the entry's cost, color or fields."""
        color = self.current_color if current_color is None else current_color
        self.stats.queries += 1
        entry = self.table.match(il_pa)
        if entry is not None and self._aged(entry, color) > self.threshold:
            self.stats.protections_granted += 1
            return Protection.PROTECT
        self.stats.protections_denied += 1
        return Protection.EVICT

    def pairwise_prefetch_check(self, il_pa: int) -> List[int]:
        entry = self.table.match(il_pa)
        if entry is None:
            return []
        out = []
        for f in entry.dl_fields:
            if not f.valid:
                continue
            page = self.dppn.page(f.d_ppn_idx)
            if page is not None:
                out.append((page << PAGE_SHIFT) | (f.d_pfo << LINE_SHIFT))
        self.stats.prefetch_candidates += len(out)
        return out

    def on_prefetch_fill(self, pa: int) -> FillClass:
        if self.table.match(pa) is not None:
            return FillClass.PROTECT_AS_INSTRUCTION
        return FillClass.PLAIN

    def color_tick(self, core: int, is_instruction: bool, pc: int, hit: bool) -> None:
        self.color.tick(core, is_instruction, pc, hit)

    # --------------------------------------------------------
    # Diagnostics
    # --------------------------------------------------------
    def dump(self) -> str:
        lines = []
        for idx, e in enumerate(self.table.entries):
            if not e.valid:
                continue
            fields = " ".join(
                f"{f.d_pfo:x}/{f.d_ppn_idx:x}/{int(f.old_bit)}/{f.sctr}" + ("" if f.valid else "/-")
                for f in e.dl_fields
            )
            lines.append(f"{idx:x} {e.il_tag:x} {e.miss_cost} {e.color} {fields}".rstrip())
        return "\n".join(lines) + ("\n" if lines else "")

    def storage_bits(self, cores: int) -> Dict[str, int]:
        cfg = self.cfg
        pair_index_bits = self.table.index_bits
        dppn_index_bits = self.dppn.index_bits
        tag_bits = PADDR_BITS - LINE_SHIFT - pair_index_bits
        field_bits = D_PFO_BITS + dppn_index_bits + 1 + SCTR_BITS
        entry_bits = tag_bits + MISS_COST_BITS + cfg.color_bits + 1 + cfg.k * field_bits
        dppn_bits = (PADDR_BITS - PAGE_SHIFT - dppn_index_bits) + SCTR_BITS + 1
        helper_bits = VPPN_BITS + PPPN_BITS + 1 + SCTR_BITS
        return {
            "pair_table": cfg.pair_table_entries * entry_bits,
            "dppn_table": cfg.dppn_entries * dppn_bits,
            "helper_tables": cores * cfg.helper_entries * helper_bits,
        }
