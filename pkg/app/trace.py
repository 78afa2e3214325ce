import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


LINE_BYTES = 64
LINE_SHIFT = 6
PAGE_SIZE = 4096
PAGE_SHIFT = 12
PADDR_BITS = 44
PADDR_MASK = (1 << PADDR_BITS) - 1
MAX_CORES = 64

TRACE_MAGIC = b"PLLC"
TRACE_VERSION = 1
TEXT_SUFFIXES = (".txt", ".trace.txt")

HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("version", "<u2"),
    ("core_count", "<u2"),
    ("record_count", "<u8"),
])
RECORD_DTYPE = np.dtype([
    ("seq", "<u8"),
    ("pc", "<u8"),
    ("packed", "<u8"),
])

# virtual bases for generated code; kernel code sits on its own pages
CODE_BASE = 0x7F3A_0000_0000
KERNEL_BASE = 0x7F3B_0000_0000
PC_SLOTS_PER_LINE = LINE_BYTES // 4


class TraceFormatError(ValueError):
    """Malformed trace input. `offset` is a byte offset (binary) or a line number (text)."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


# ============================================================
# Trace record
# ============================================================
class AccessKind(IntEnum):
    IFETCH = 0
    LOAD = 1
    STORE = 2


@dataclass(frozen=True, slots=True)
class MemoryAccess:
    seq: int
    core_id: int
    kind: AccessKind
    pc: int
    paddr: int

    @property
    def line(self) -> int:
        return self.paddr >> LINE_SHIFT

    @property
    def is_instruction(self) -> bool:
        return self.kind == AccessKind.IFETCH


@dataclass(frozen=True)
class TraceGenConfig:
    n_instr_lines: int = 2048
    n_data_lines: int = 256
    data_sharing_degree: int = 8
    accesses_per_instr: int = 2
    cores: int = 4
    page_size: int = PAGE_SIZE
    rng_seed: int = 0
    instructions_per_core: int = 20000
    store_ratio: float = 0.10
    interleave_jitter: int = 2
    # opt-in hot kernel code streaming over cold data (many-to-few only)
    stream_fraction: float = 0.0
    n_kernel_lines: int = 16
    n_stream_lines: int = 2048

    def validate(self) -> None:
        counts = {
            "n_instr_lines": self.n_instr_lines,
            "n_data_lines": self.n_data_lines,
            "data_sharing_degree": self.data_sharing_degree,
            "accesses_per_instr": self.accesses_per_instr,
            "cores": self.cores,
            "instructions_per_core": self.instructions_per_core,
            "n_kernel_lines": self.n_kernel_lines,
            "n_stream_lines": self.n_stream_lines,
        }
        for name, value in counts.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.page_size != PAGE_SIZE:
            raise ValueError(f"page_size must be {PAGE_SIZE}, got {self.page_size}")
        if self.cores > MAX_CORES:
            raise ValueError(f"cores must be <= {MAX_CORES}, got {self.cores}")
        if not 0.0 <= self.store_ratio <= 1.0:
            raise ValueError(f"store_ratio must be in [0, 1], got {self.store_ratio}")
        if not 0.0 <= self.stream_fraction < 1.0:
            raise ValueError(f"stream_fraction must be in [0, 1), got {self.stream_fraction}")
        if self.interleave_jitter < 0:
            raise ValueError("interleave_jitter must be >= 0")


# ============================================================
# Address layout (per-trace random page table)
# ============================================================
class _PageAllocator:
    """Hands out unique random physical page numbers below the 44-bit limit."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used = set()
        self.page_table: Dict[int, int] = {}

    def fresh_ppn(self) -> int:
        while True:
            ppn = int(self.rng.integers(1, 1 << (PADDR_BITS - PAGE_SHIFT)))
            if ppn not in self.used:
                self.used.add(ppn)
                return ppn

    def translate(self, vaddr: int) -> int:
        vpn = vaddr >> PAGE_SHIFT
        if vpn not in self.page_table:
            self.page_table[vpn] = self.fresh_ppn()
        return (self.page_table[vpn] << PAGE_SHIFT) | (vaddr & (PAGE_SIZE - 1))

    def data_lines(self, count: int) -> List[int]:
        """Physical byte addresses of `count` contiguous-in-page data lines."""
        per_page = PAGE_SIZE // LINE_BYTES
        lines = []
        ppn = 0
        for i in range(count):
            if i % per_page == 0:
                ppn = self.fresh_ppn()
            lines.append((ppn << PAGE_SHIFT) | ((i % per_page) << LINE_SHIFT))
        return lines


def _code_lines(base: int, count: int) -> List[int]:
    return [base + i * LINE_BYTES for i in range(count)]


# ============================================================
# Per-core programs
# ============================================================
Record = Tuple[int, int, int]  # (kind, pc, paddr)


def _data_kinds(rng: np.random.Generator, shape, store_ratio: float) -> np.ndarray:
    return np.where(rng.random(shape) < store_ratio, AccessKind.STORE, AccessKind.LOAD)


def _many_to_few_core(
    core: int,
    cfg: TraceGenConfig,
    rng: np.random.Generator,
    pages: _PageAllocator,
    server_code: List[int],
    kernel_code: List[int],
    pairs: List[List[int]],
    data: List[int],
    stream: List[int],
) -> List[Record]:
    n = cfg.instructions_per_core
    apl = cfg.accesses_per_instr

    is_kernel = rng.random(n) < cfg.stream_fraction
    server_pick = rng.integers(0, len(server_code), n)
    pc_slots = rng.integers(0, PC_SLOTS_PER_LINE, (n, apl + 1)) * 4
    byte_off = rng.integers(0, LINE_BYTES // 8, (n, apl)) * 8
    kinds = _data_kinds(rng, (n, apl), cfg.store_ratio)

    kernel_cursor = (core * len(kernel_code)) // cfg.cores
    stream_chunk = max(1, len(stream) // cfg.cores)
    stream_cursor = core * stream_chunk

    records: List[Record] = []
    for step in range(n):
        if is_kernel[step]:
            line_va = kernel_code[kernel_cursor % len(kernel_code)]
            kernel_cursor += 1
        else:
            line_va = server_code[server_pick[step]]

        pc = line_va + int(pc_slots[step, 0])
        records.append((AccessKind.IFETCH, pc, pages.translate(pc)))

        for j in range(apl):
            if is_kernel[step]:
                target = stream[stream_cursor % len(stream)]
                stream_cursor += 1
            else:
                owned = pairs[server_pick[step]]
                target = data[owned[j % len(owned)]]
            data_pc = line_va + int(pc_slots[step, j + 1])
            records.append((int(kinds[step, j]), data_pc, target + int(byte_off[step, j])))

    return records


def _few_to_many_core(
    core: int,
    cfg: TraceGenConfig,
    rng: np.random.Generator,
    pages: _PageAllocator,
    code: List[int],
    data: List[int],
) -> List[Record]:
    n = cfg.instructions_per_core
    apl = cfg.accesses_per_instr

    data_pick = rng.integers(0, len(data), (n, apl))
    pc_slots = rng.integers(0, PC_SLOTS_PER_LINE, (n, apl + 1)) * 4
    byte_off = rng.integers(0, LINE_BYTES // 8, (n, apl)) * 8
    kinds = _data_kinds(rng, (n, apl), cfg.store_ratio)

    cursor = (core * len(code)) // cfg.cores
    records: List[Record] = []
    for step in range(n):
        line_va = code[cursor % len(code)]
        cursor += 1

        pc = line_va + int(pc_slots[step, 0])
        records.append((AccessKind.IFETCH, pc, pages.translate(pc)))

        for j in range(apl):
            data_pc = line_va + int(pc_slots[step, j + 1])
            target = data[data_pick[step, j]] + int(byte_off[step, j])
            records.append((int(kinds[step, j]), data_pc, target))

    return records


# ============================================================
# Interleaving
# ============================================================
def interleave(
    per_core: Sequence[Sequence[Record]],
    rng: np.random.Generator,
    jitter: int,
) -> List[MemoryAccess]:
    """Round-robin over cores; each turn takes 1 + U[0, jitter] records from a core."""
    cursors = [0] * len(per_core)
    bursts = [1 + rng.integers(0, jitter + 1, len(records) + 1) for records in per_core]
    turns = [0] * len(per_core)

    out: List[MemoryAccess] = []
    remaining = sum(len(r) for r in per_core)
    while remaining:
        for core, records in enumerate(per_core):
            start = cursors[core]
            if start >= len(records):
                continue
            stop = min(len(records), start + int(bursts[core][turns[core]]))
            turns[core] += 1
            for kind, pc, paddr in records[start:stop]:
                out.append(MemoryAccess(len(out), core, AccessKind(kind), pc, paddr))
            cursors[core] = stop
            remaining -= stop - start
    return out


def _core_rngs(cfg: TraceGenConfig) -> Tuple[np.random.Generator, List[np.random.Generator]]:
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.cores + 1)
    layout_rng = np.random.default_rng(seeds[0])
    return layout_rng, [np.random.default_rng(s) for s in seeds[1:]]


# ============================================================
# Generators
# ============================================================
def generate_many_to_few(cfg: TraceGenConfig) -> List[MemoryAccess]:
    """
    Many rarely fetched instruction lines, each paired with a few hot shared
    data lines. With `stream_fraction` > 0 that share of steps runs a small
    hot kernel loop that streams over cold data.
    """
    cfg.validate()
    if cfg.n_instr_lines < 4 * cfg.n_data_lines:
        raise ValueError(
            f"many-to-few needs n_instr_lines >= 4 * n_data_lines "
            f"(got {cfg.n_instr_lines} vs {cfg.n_data_lines})"
        )

    layout_rng, core_rngs = _core_rngs(cfg)
    pages = _PageAllocator(layout_rng)

    server_code = _code_lines(CODE_BASE, cfg.n_instr_lines)
    kernel_code = _code_lines(KERNEL_BASE, cfg.n_kernel_lines)
    data = pages.data_lines(cfg.n_data_lines)
    stream = pages.data_lines(cfg.n_stream_lines) if cfg.stream_fraction > 0 else []

    per_instr = max(1, round(cfg.data_sharing_degree * cfg.n_data_lines / cfg.n_instr_lines))
    order = layout_rng.permutation(cfg.n_data_lines)
    pairs = [
        [int(order[(i * per_instr + j) % cfg.n_data_lines]) for j in range(per_instr)]
        for i in range(cfg.n_instr_lines)
    ]

    per_core = [
        _many_to_few_core(core, cfg, core_rngs[core], pages,
                          server_code, kernel_code, pairs, data, stream)
        for core in range(cfg.cores)
    ]
    stream_out = interleave(per_core, layout_rng, cfg.interleave_jitter)
    logger.info("many-to-few trace: %d accesses, %d cores, seed %d",
                len(stream_out), cfg.cores, cfg.rng_seed)
    return stream_out


def generate_few_to_many(cfg: TraceGenConfig) -> List[MemoryAccess]:
    """A few hot instruction lines looping over many cold data lines."""
    cfg.validate()
    if cfg.n_data_lines < 4 * cfg.n_instr_lines:
        raise ValueError(
            f"few-to-many needs n_data_lines >= 4 * n_instr_lines "
            f"(got {cfg.n_data_lines} vs {cfg.n_instr_lines})"
        )

    layout_rng, core_rngs = _core_rngs(cfg)
    pages = _PageAllocator(layout_rng)
    code = _code_lines(CODE_BASE, cfg.n_instr_lines)
    data = pages.data_lines(cfg.n_data_lines)

    per_core = [
        _few_to_many_core(core, cfg, core_rngs[core], pages, code, data)
        for core in range(cfg.cores)
    ]
    stream_out = interleave(per_core, layout_rng, cfg.interleave_jitter)
    logger.info("few-to-many trace: %d accesses, %d cores, seed %d",
                len(stream_out), cfg.cores, cfg.rng_seed)
    return stream_out


GENERATORS = {
    "many-to-few": generate_many_to_few,
    "few-to-many": generate_few_to_many,
}


# ============================================================
# Trace files
# ============================================================
def _is_text(path: Path) -> bool:
    return path.name.endswith(TEXT_SUFFIXES)


def _pack(acc: MemoryAccess) -> int:
    if not 0 <= acc.paddr <= PADDR_MASK:
        raise ValueError(f"paddr {acc.paddr:#x} exceeds {PADDR_BITS} bits (seq {acc.seq})")
    if not 0 <= acc.core_id < MAX_CORES:
        raise ValueError(f"core_id {acc.core_id} out of range (seq {acc.seq})")
    return (int(acc.kind) << 62) | (acc.core_id << 56) | acc.paddr


def write_trace(path, stream: Iterable[MemoryAccess]) -> None:
    path = Path(path)
    records = list(stream)
    cores = max((a.core_id for a in records), default=-1) + 1

    if _is_text(path):
        with path.open("w", encoding="ascii") as f:
            f.write(f"#PLLC {TRACE_VERSION} {cores} {len(records)}\n")
            for a in records:
                _pack(a)
                f.write(f"{a.seq:x} {a.core_id:x} {int(a.kind):x} {a.pc:x} {a.paddr:x}\n")
        return

    header = np.array([(TRACE_MAGIC, TRACE_VERSION, cores, len(records))], dtype=HEADER_DTYPE)
    body = np.array([(a.seq, a.pc, _pack(a)) for a in records], dtype=RECORD_DTYPE)
    with path.open("wb") as f:
        f.write(header.tobytes())
        f.write(body.tobytes())


def _check_seq(prev: int, seq: int, offset: int) -> None:
    if seq <= prev:
        raise TraceFormatError(f"sequence number {seq} does not increase", offset)


def _read_binary(path: Path) -> List[MemoryAccess]:
    raw = path.read_bytes()
    if len(raw) < HEADER_DTYPE.itemsize:
        raise TraceFormatError("truncated header", 0)

    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != TRACE_MAGIC:
        raise TraceFormatError("bad magic", 0)
    if int(header["version"]) != TRACE_VERSION:
        raise TraceFormatError(
            f"version mismatch: file {int(header['version'])}, reader {TRACE_VERSION}", 4
        )

    body = raw[HEADER_DTYPE.itemsize:]
    whole, tail = divmod(len(body), RECORD_DTYPE.itemsize)
    if tail:
        raise TraceFormatError(
            "truncated record", HEADER_DTYPE.itemsize + whole * RECORD_DTYPE.itemsize
        )
    if whole != int(header["record_count"]):
        raise TraceFormatError(
            f"header promises {int(header['record_count'])} records, file holds {whole}",
            HEADER_DTYPE.itemsize + whole * RECORD_DTYPE.itemsize,
        )

    recs = np.frombuffer(body, dtype=RECORD_DTYPE)
    packed = recs["packed"]
    kinds = (packed >> np.uint64(62)).tolist()
    cores = ((packed >> np.uint64(56)) & np.uint64(0x3F)).tolist()
    paddrs = (packed & np.uint64(PADDR_MASK)).tolist()

    out: List[MemoryAccess] = []
    prev = -1
    for i, (seq, pc) in enumerate(zip(recs["seq"].tolist(), recs["pc"].tolist())):
        offset = HEADER_DTYPE.itemsize + i * RECORD_DTYPE.itemsize
        if kinds[i] > AccessKind.STORE:
            raise TraceFormatError(f"unknown access kind {kinds[i]}", offset)
        _check_seq(prev, seq, offset)
        prev = seq
        out.append(MemoryAccess(seq, cores[i], AccessKind(kinds[i]), pc, paddrs[i]))
    return out


def _decode(raw: bytes, lineno: int) -> str:
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise TraceFormatError(f"non-ASCII text ({e.reason})", lineno) from e


def _read_text(path: Path) -> List[MemoryAccess]:
    out: List[MemoryAccess] = []
    with path.open("rb") as f:
        head = _decode(f.readline(), 1).split()
        if len(head) != 4 or head[0] != "#PLLC":
            raise TraceFormatError("bad text header", 1)
        try:
            version, expected = int(head[1]), int(head[3])
        except ValueError as e:
            raise TraceFormatError(f"bad text header ({e})", 1) from e
        if version != TRACE_VERSION:
            raise TraceFormatError(f"version mismatch: file {head[1]}, reader {TRACE_VERSION}", 1)

        prev = -1
        for lineno, raw in enumerate(f, start=2):
            line = _decode(raw, lineno)
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 5:
                raise TraceFormatError(f"expected 5 fields, got {len(fields)}", lineno)
            try:
                seq, core, kind, pc, paddr = (int(x, 16) for x in fields)
                kind = AccessKind(kind)
            except ValueError as e:
                raise TraceFormatError(f"bad field ({e})", lineno) from e
            if paddr > PADDR_MASK:
                raise TraceFormatError(f"paddr {paddr:#x} exceeds {PADDR_BITS} bits", lineno)
            _check_seq(prev, seq, lineno)
            prev = seq
            out.append(MemoryAccess(seq, core, kind, pc, paddr))

    if len(out) != expected:
        raise TraceFormatError(f"header promises {expected} records, file holds {len(out)}")
    return out


def read_trace(path) -> List[MemoryAccess]:
    path = Path(path)
    stream = _read_text(path) if _is_text(path) else _read_binary(path)
    logger.debug("read %d records from %s", len(stream), path)
    return stream
