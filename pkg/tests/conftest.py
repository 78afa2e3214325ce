from typing import Iterable, List, Tuple

import pytest

from app.cache import CacheLevelConfig, HierarchyConfig
from app.trace import AccessKind, MemoryAccess, TraceGenConfig


def make_stream(items: Iterable[Tuple[int, AccessKind, int, int]]) -> List[MemoryAccess]:
    """(core, kind, pc, paddr) tuples -> records with consecutive seq numbers."""
    return [MemoryAccess(i, core, kind, pc, paddr) for i, (core, kind, pc, paddr) in enumerate(items)]


@pytest.fixture
def small_hierarchy() -> HierarchyConfig:
    # 4KB 4-way private (16 sets), 96KB 12-way LLC (128 sets)
    return HierarchyConfig(
        private=CacheLevelConfig(4 * 1024, 4, 3),
        llc=CacheLevelConfig(96 * 1024, 12, 40),
        memory_latency=147,
    )


@pytest.fixture
def small_gen() -> TraceGenConfig:
    return TraceGenConfig(
        n_instr_lines=1024,
        n_data_lines=128,
        cores=2,
        instructions_per_core=3000,
        rng_seed=7,
        stream_fraction=0.2,
        n_stream_lines=512,
    )
