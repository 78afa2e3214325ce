from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .replacement import CacheRequest, ReplacementPolicy

INF = float("inf")

SetState = Dict[int, Dict[int, float]]  # set -> {line: next use}


# ============================================================
# Offline MIN labeling
# ============================================================
def next_uses(lines: Sequence[int]) -> List[float]:
    """Index of the next reference to the same line, or INF."""
    out: List[float] = [INF] * len(lines)
    seen: Dict[int, int] = {}
    for i in range(len(lines) - 1, -1, -1):
        out[i] = seen.get(lines[i], INF)
        seen[lines[i]] = i
    return out


@dataclass
class BeladyLabels:
    would_hit: List[bool] = field(default_factory=list)
    # evicted line on a fill, None when nothing was evicted or the fill bypassed
    victims: List[Optional[int]] = field(default_factory=list)
    bypassed: List[bool] = field(default_factory=list)

    @property
    def misses(self) -> int:
        return sum(1 for hit in self.would_hit if not hit)


def belady_annotate(
    lines: Sequence[int],
    n_sets: int,
    ways: int,
    state: Optional[SetState] = None,
    start: int = 0,
    stop: Optional[int] = None,
) -> Tuple[BeladyLabels, SetState]:
    """
    Label demand accesses lines[start:stop] under MIN, each set independently.
    A missing line whose next use is no nearer than every resident's is not
    cached. `state` carries residency between calls; lookahead always spans
    the full stream, so labeling in chunks matches labeling in one pass.
    """
    stop = len(lines) if stop is None else stop
    state = {} if state is None else {s: dict(r) for s, r in state.items()}
    future = next_uses(lines)
    mask = n_sets - 1
    labels = BeladyLabels()

    for i in range(start, stop):
        line = lines[i]
        resident = state.setdefault(line & mask, {})

        if line in resident:
            resident[line] = future[i]
            labels.would_hit.append(True)
            labels.victims.append(None)
            labels.bypassed.append(False)
            continue

        labels.would_hit.append(False)
        if len(resident) < ways:
            resident[line] = future[i]
            labels.victims.append(None)
            labels.bypassed.append(False)
            continue

        farthest = max(resident, key=resident.get)
        if future[i] >= resident[farthest]:
            labels.victims.append(None)
            labels.bypassed.append(True)
            continue

        del resident[farthest]
        resident[line] = future[i]
        labels.victims.append(farthest)
        labels.bypassed.append(False)

    return labels, state


# ============================================================
# Oracle policy (replays MIN inside the hierarchy)
# ============================================================
class BeladyPolicy(ReplacementPolicy):
    """
    Needs the LLC demand stream up front (see cache.filter_llc_stream).
    Requests carry their demand index; prefetches use the latest index seen.
    """

    name = "belady"

    def __init__(self, future_lines: Sequence[int]):
        self.positions: Dict[int, List[int]] = {}
        for i, line in enumerate(future_lines):
            self.positions.setdefault(line, []).append(i)
        self.position = -1

    def _setup(self):
        self.next_use = [[INF] * self.ways for _ in range(self.n_sets)]

    def _next_after(self, req: CacheRequest) -> float:
        if req.index >= 0:
            self.position = req.index
        refs = self.positions.get(req.line)
        if not refs:
            return INF
        i = bisect_right(refs, self.position)
        return refs[i] if i < len(refs) else INF

    def on_hit(self, set_idx, way, req):
        self.next_use[set_idx][way] = self._next_after(req)

    def on_fill(self, set_idx, way, req):
        value = self._next_after(req)
        self.next_use[set_idx][way] = value
        return -1 if value == INF else int(value)

    def choose_victim(self, set_idx, req):
        row = self.next_use[set_idx]
        return sorted(range(self.ways), key=lambda w: (-row[w], w))

    def should_bypass(self, set_idx, req):
        return self._next_after(req) >= max(self.next_use[set_idx])

    def on_evict(self, set_idx, way):
        self.next_use[set_idx][way] = INF
