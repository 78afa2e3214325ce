import abc
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)


POLICY_NAMES = ("lru", "drrip", "hawkeye", "mockingjay", "belady", "i-oracle:<inner>")
ORACLE_PREFIX = "i-oracle:"


def validate_policy_name(name: str) -> None:
    inner = name[len(ORACLE_PREFIX):] if name.startswith(ORACLE_PREFIX) else name
    if inner not in POLICY_NAMES[:5] or inner.startswith(ORACLE_PREFIX):
        raise ValueError(f"unknown policy {name!r}; valid: {', '.join(POLICY_NAMES)}")


def pc_signature(pc: int, bits: int) -> int:
    """Fold the 64B-aligned PC into a `bits`-wide table index."""
    line = pc >> 6
    return (line ^ (line >> bits) ^ (line >> (2 * bits))) & ((1 << bits) - 1)


# ============================================================
# Policy interface
# ============================================================
@dataclass(slots=True)
class CacheRequest:
    line: int
    pc: int
    core: int
    is_instruction: bool
    is_prefetch: bool = False
    index: int = -1  # position in the LLC demand stream; -1 for prefetches


class ReplacementPolicy(abc.ABC):
    """
    Hooks the LLC calls per set/way. `choose_victim` is only called on a full
    set and returns every way, best victim first; the caller may skip
    candidates (query-based protection) and calls `on_protect` for those.
    """

    name = "base"
    pins_instructions = False

    def bind(self, n_sets: int, ways: int) -> "ReplacementPolicy":
        self.n_sets = n_sets
        self.ways = ways
        self._setup()
        return self

    @abc.abstractmethod
    def _setup(self) -> None:
        ...

    @abc.abstractmethod
    def on_hit(self, set_idx: int, way: int, req: CacheRequest) -> None:
        ...

    @abc.abstractmethod
    def on_fill(self, set_idx: int, way: int, req: CacheRequest) -> int:
        """Install metadata for a new line; returns the insertion value."""

    @abc.abstractmethod
    def choose_victim(self, set_idx: int, req: CacheRequest) -> List[int]:
        ...

    def on_evict(self, set_idx: int, way: int) -> None:
        pass

    def on_protect(self, set_idx: int, way: int) -> None:
        pass

    def should_bypass(self, set_idx: int, req: CacheRequest) -> bool:
        return False


# ============================================================
# LRU
# ============================================================
class LRUPolicy(ReplacementPolicy):
    name = "lru"

    def _setup(self) -> None:
        # per set: ways ordered MRU first
        self.stacks: List[List[int]] = [[] for _ in range(self.n_sets)]

    def _touch(self, set_idx: int, way: int) -> None:
        stack = self.stacks[set_idx]
        if way in stack:
            stack.remove(way)
        stack.insert(0, way)

    def on_hit(self, set_idx, way, req):
        self._touch(set_idx, way)

    def on_fill(self, set_idx, way, req):
        if not req.is_prefetch:
            self._touch(set_idx, way)
            return 0
        stack = self.stacks[set_idx]
        if way in stack:
            stack.remove(way)
        # one above the LRU position
        pos = max(0, len(stack) - 1)
        stack.insert(pos, way)
        return pos

    def choose_victim(self, set_idx, req):
        stack = self.stacks[set_idx]
        missing = [w for w in range(self.ways) if w not in stack]
        return missing + stack[::-1]

    def on_evict(self, set_idx, way):
        stack = self.stacks[set_idx]
        if way in stack:
            stack.remove(way)

    def on_protect(self, set_idx, way):
        self._touch(set_idx, way)


# ============================================================
# DRRIP (SRRIP / BRRIP set dueling)
# ============================================================
class DRRIPPolicy(ReplacementPolicy):
    name = "drrip"

    def __init__(
        self,
        rrpv_bits: int = 5,
        bimodal_epsilon: float = 1 / 32,
        n_leader_sets: int = 32,
        psel_bits: int = 10,
    ):
        self.max_rrpv = (1 << rrpv_bits) - 1
        self.bimodal_period = max(1, round(1 / bimodal_epsilon))
        self.n_leader_sets = n_leader_sets
        self.psel_max = (1 << psel_bits) - 1

    def _setup(self):
        self.rrpv = [[self.max_rrpv] * self.ways for _ in range(self.n_sets)]
        self.psel = (self.psel_max + 1) // 2
        self._bimodal_ctr = 0
        self.leader_misses = {"srrip": 0, "brrip": 0}

        leaders = min(self.n_leader_sets, self.n_sets // 2)
        self.leader: Dict[int, str] = {}
        if leaders:
            stride = self.n_sets // leaders
            for i in range(leaders):
                self.leader[i * stride] = "srrip"
                self.leader[i * stride + stride // 2] = "brrip"

    def set_mode(self, set_idx: int) -> str:
        if set_idx in self.leader:
            return self.leader[set_idx]
        return "brrip" if self.psel > (self.psel_max + 1) // 2 else "srrip"

    def _insertion(self, mode: str) -> int:
        if mode == "srrip":
            return self.max_rrpv - 1
        self._bimodal_ctr = (self._bimodal_ctr + 1) % self.bimodal_period
        return self.max_rrpv - 1 if self._bimodal_ctr == 0 else self.max_rrpv

    def on_hit(self, set_idx, way, req):
        self.rrpv[set_idx][way] = 0

    def on_fill(self, set_idx, way, req):
        if req.is_prefetch:
            self.rrpv[set_idx][way] = self.max_rrpv
            return self.max_rrpv

        mode = self.set_mode(set_idx)
        leader = self.leader.get(set_idx)
        if leader == "srrip":
            self.leader_misses["srrip"] += 1
            self.psel = min(self.psel_max, self.psel + 1)
        elif leader == "brrip":
            self.leader_misses["brrip"] += 1
            self.psel = max(0, self.psel - 1)

        value = self._insertion(mode)
        self.rrpv[set_idx][way] = value
        return value

    def choose_victim(self, set_idx, req):
        rr = self.rrpv[set_idx]
        gap = self.max_rrpv - max(rr)
        if gap:
            for w in range(self.ways):
                rr[w] += gap
        return sorted(range(self.ways), key=lambda w: (-rr[w], w))

    def on_protect(self, set_idx, way):
        self.rrpv[set_idx][way] = 0


# ============================================================
# Sampled-set history shared by Hawkeye-lite and Mockingjay-lite
# ============================================================
class SampledHistory:
    """
    Per-set access clock with the last access time and signature of each line.
    Lines not re-referenced within `length` set accesses expire.
    """

    def __init__(self, length: int):
        self.length = length
        self.clock = 0
        self.last: Dict[int, Tuple[int, int]] = {}
        self.order: Deque[Tuple[int, int]] = deque()

    def access(self, line: int, sig: int) -> Tuple[Optional[Tuple[int, int]], List[int]]:
        """Returns ((prev_time, prev_sig) or None, signatures that just expired)."""
        t = self.clock
        expired = []
        while self.order and self.order[0][0] <= t - self.length:
            t0, old = self.order.popleft()
            entry = self.last.get(old)
            if entry is not None and entry[0] == t0:
                expired.append(entry[1])
                del self.last[old]

        prev = self.last.get(line)
        self.last[line] = (t, sig)
        self.order.append((t, line))
        self.clock += 1
        return prev, expired


def _sampled(n_sets: int, sampled_sets: int) -> Dict[int, bool]:
    count = max(1, min(sampled_sets, n_sets))
    stride = n_sets // count
    return {s: True for s in range(0, n_sets, stride)}


# ============================================================
# Hawkeye-lite
# ============================================================
class OptGen:
    """Occupancy-vector replay of Belady's decisions over one sampled set."""

    def __init__(self, ways: int, length: int):
        self.ways = ways
        self.history = SampledHistory(length)
        self.occupancy = np.zeros(length, dtype=np.int32)

    def access(self, line: int, sig: int) -> Tuple[Optional[Tuple[int, bool]], List[int]]:
        L = self.history.length
        t = self.history.clock
        prev, expired = self.history.access(line, sig)
        self.occupancy[t % L] = 0

        if prev is None:
            return None, expired

        t0, psig = prev
        window = np.arange(t0, t) % L
        if np.all(self.occupancy[window] < self.ways):
            self.occupancy[window] += 1
            return (psig, True), expired
        return (psig, False), expired


class HawkeyePolicy(ReplacementPolicy):
    name = "hawkeye"

    def __init__(
        self,
        sampled_sets: int = 64,
        history_multiplier: int = 8,
        predictor_bits: int = 11,
        counter_bits: int = 3,
    ):
        self.sampled_sets = sampled_sets
        self.history_multiplier = history_multiplier
        self.predictor_bits = predictor_bits
        self.counter_max = (1 << counter_bits) - 1
        self.friendly_at = 1 << (counter_bits - 1)

    def _setup(self):
        self.max_rrpv = 7
        self.predictor = np.full(1 << self.predictor_bits, self.friendly_at, dtype=np.int8)
        self.rrpv = [[self.max_rrpv] * self.ways for _ in range(self.n_sets)]
        self.sig = [[0] * self.ways for _ in range(self.n_sets)]
        length = self.history_multiplier * self.ways
        self.optgen = {s: OptGen(self.ways, length) for s in _sampled(self.n_sets, self.sampled_sets)}

    def _train(self, sig: int, friendly: bool) -> None:
        value = int(self.predictor[sig])
        self.predictor[sig] = min(self.counter_max, value + 1) if friendly else max(0, value - 1)

    def _observe(self, set_idx: int, req: CacheRequest) -> int:
        sig = pc_signature(req.pc, self.predictor_bits)
        gen = self.optgen.get(set_idx)
        if gen is not None and not req.is_prefetch:
            outcome, expired = gen.access(req.line, sig)
            for old in expired:
                self._train(old, False)
            if outcome is not None:
                self._train(*outcome)
        return sig

    def predict(self, pc: int) -> bool:
        """True if the PC is predicted cache-friendly."""
        return int(self.predictor[pc_signature(pc, self.predictor_bits)]) >= self.friendly_at

    def on_hit(self, set_idx, way, req):
        sig = self._observe(set_idx, req)
        self.sig[set_idx][way] = sig
        self.rrpv[set_idx][way] = 0 if self.predictor[sig] >= self.friendly_at else self.max_rrpv

    def on_fill(self, set_idx, way, req):
        sig = self._observe(set_idx, req)
        self.sig[set_idx][way] = sig
        if req.is_prefetch or self.predictor[sig] < self.friendly_at:
            self.rrpv[set_idx][way] = self.max_rrpv
            return self.max_rrpv

        rr = self.rrpv[set_idx]
        for w in range(self.ways):
            if w != way and rr[w] < self.max_rrpv - 1:
                rr[w] += 1
        rr[way] = 0
        return 0

    def choose_victim(self, set_idx, req):
        rr = self.rrpv[set_idx]
        return sorted(range(self.ways), key=lambda w: (-rr[w], w))

    def on_evict(self, set_idx, way):
        # a friendly line reaching eviction was mispredicted
        if self.rrpv[set_idx][way] < self.max_rrpv:
            self._train(self.sig[set_idx][way], False)
        self.rrpv[set_idx][way] = self.max_rrpv

    def on_protect(self, set_idx, way):
        self.rrpv[set_idx][way] = 0


# ============================================================
# Mockingjay-lite
# ============================================================
class MockingjayPolicy(ReplacementPolicy):
    name = "mockingjay"

    def __init__(
        self,
        sampled_sets: int = 64,
        etr_bits: int = 5,
        history_multiplier: int = 8,
        predictor_bits: int = 11,
    ):
        self.sampled_sets = sampled_sets
        self.max_etr = (1 << (etr_bits - 1)) - 1
        self.min_etr = -(1 << (etr_bits - 1))
        self.median_etr = (self.max_etr + 1) // 2
        self.history_multiplier = history_multiplier
        self.predictor_bits = predictor_bits

    def _setup(self):
        self.history_len = self.history_multiplier * self.ways
        self.granularity = max(1, math.ceil(self.history_len / self.max_etr))
        self.rdp = np.full(1 << self.predictor_bits, -1, dtype=np.int32)
        self.etr = [[0] * self.ways for _ in range(self.n_sets)]
        self.set_clock = [0] * self.n_sets
        self.samplers = {
            s: SampledHistory(self.history_len) for s in _sampled(self.n_sets, self.sampled_sets)
        }

    def train(self, sig: int, distance: int) -> None:
        cur = int(self.rdp[sig])
        if cur < 0:
            self.rdp[sig] = distance
        elif distance > cur:
            self.rdp[sig] = cur + (distance - cur + 1) // 2
        elif distance < cur:
            self.rdp[sig] = cur - (cur - distance + 1) // 2

    def predicted_etr(self, pc: int) -> int:
        rd = int(self.rdp[pc_signature(pc, self.predictor_bits)])
        if rd < 0:
            return self.median_etr
        return min(self.max_etr, math.ceil(rd / self.granularity))

    def _observe(self, set_idx: int, req: CacheRequest) -> None:
        if req.is_prefetch:
            return
        self.set_clock[set_idx] += 1
        if self.set_clock[set_idx] % self.granularity == 0:
            row = self.etr[set_idx]
            for w in range(self.ways):
                row[w] = max(self.min_etr, row[w] - 1)

        sampler = self.samplers.get(set_idx)
        if sampler is None:
            return
        t = sampler.clock
        prev, expired = sampler.access(req.line, pc_signature(req.pc, self.predictor_bits))
        for sig in expired:
            self.train(sig, self.history_len)
        if prev is not None:
            self.train(prev[1], t - prev[0])

    def on_hit(self, set_idx, way, req):
        self._observe(set_idx, req)
        self.etr[set_idx][way] = self.predicted_etr(req.pc)

    def on_fill(self, set_idx, way, req):
        self._observe(set_idx, req)
        value = self.max_etr if req.is_prefetch else self.predicted_etr(req.pc)
        self.etr[set_idx][way] = value
        return value

    def choose_victim(self, set_idx, req):
        row = self.etr[set_idx]
        return sorted(range(self.ways), key=lambda w: (row[w] >= 0, -abs(row[w]), w))

    def on_protect(self, set_idx, way):
        self.etr[set_idx][way] = 0


# ============================================================
# I-oracle wrapper
# ============================================================
class IOraclePolicy(ReplacementPolicy):
    """
    Instruction lines are pinned outside the set capacity once fetched; the
    cache honours `pins_instructions`. Data goes through the inner policy.
    """

    pins_instructions = True

    def __init__(self, inner: ReplacementPolicy):
        self.inner = inner
        self.name = f"{ORACLE_PREFIX}{inner.name}"

    def _setup(self):
        self.inner.bind(self.n_sets, self.ways)

    def on_hit(self, set_idx, way, req):
        self.inner.on_hit(set_idx, way, req)

    def on_fill(self, set_idx, way, req):
        return self.inner.on_fill(set_idx, way, req)

    def choose_victim(self, set_idx, req):
        return self.inner.choose_victim(set_idx, req)

    def on_evict(self, set_idx, way):
        self.inner.on_evict(set_idx, way)

    def on_protect(self, set_idx, way):
        self.inner.on_protect(set_idx, way)

    def should_bypass(self, set_idx, req):
        return self.inner.should_bypass(set_idx, req)


# ============================================================
# Registry (online policies; the Belady oracle needs the future and
# is built by the simulator)
# ============================================================
ONLINE_POLICIES = {
    "lru": LRUPolicy,
    "drrip": DRRIPPolicy,
    "hawkeye": HawkeyePolicy,
    "mockingjay": MockingjayPolicy,
}


def make_online_policy(name: str) -> ReplacementPolicy:
    if name.startswith(ORACLE_PREFIX):
        return IOraclePolicy(make_online_policy(name[len(ORACLE_PREFIX):]))
    try:
        return ONLINE_POLICIES[name]()
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; valid: {', '.join(POLICY_NAMES)}") from None
