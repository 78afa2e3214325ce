"""End-to-end trends on the synthetic generators; slow, skip with `pytest -m "not slow"`."""
from dataclasses import replace

import numpy as np
import pytest

from app.config import RunConfig
from app.pairwise import PairwiseConfig
from app.simulator import simulate
from app.trace import TraceGenConfig

pytestmark = pytest.mark.slow

# server code plus its hot data fit in the test LLC; a cold kernel stream evicts them under LRU
MANY = TraceGenConfig(n_instr_lines=512, n_data_lines=64, cores=4, instructions_per_core=10000,
                      stream_fraction=0.7, n_stream_lines=16384)
# code footprint well past the LLC, so instruction misses stay common
WIDE = TraceGenConfig(n_instr_lines=4096, n_data_lines=256, cores=4, instructions_per_core=6000,
                      stream_fraction=0.2)
FEW = TraceGenConfig(n_instr_lines=64, n_data_lines=8192, cores=4, instructions_per_core=6000)


def run(small_hierarchy, gen, name, seed=7, policy="lru", pairwise=False, k=1):
    cfg = RunConfig(
        generator=name,
        trace_gen=replace(gen, rng_seed=seed),
        hierarchy=small_hierarchy,
        policy=policy,
        pairwise=PairwiseConfig(enabled=pairwise, k=k, period_n=2000),
    )
    return simulate(cfg).report


def test_instruction_misses_more_likely_when_paired_data_hits(small_hierarchy):
    gaps = []
    for seed in range(5):
        rates = run(small_hierarchy, WIDE, "many-to-few", seed=seed).conditional_miss_rates
        gaps.append(rates["rate_given_data_hit"] - rates["rate_given_data_miss"])
    assert np.mean(gaps) >= 0.05


def test_pairwise_cuts_instruction_misses_on_many_to_few(small_hierarchy):
    bare = run(small_hierarchy, MANY, "many-to-few")
    paired = run(small_hierarchy, MANY, "many-to-few", pairwise=True)
    before = bare.levels["instruction"]["llc_misses"]
    after = paired.levels["instruction"]["llc_misses"]
    assert after <= 0.8 * before
    assert paired.stalls["total_cycles"] < bare.stalls["total_cycles"]


def test_pairwise_leaves_few_to_many_data_alone(small_hierarchy):
    def data_miss_rate(report):
        lv = report.levels["data"]
        return lv["llc_misses"] / lv["accesses"]

    bare = run(small_hierarchy, FEW, "few-to-many")
    paired = run(small_hierarchy, FEW, "few-to-many", pairwise=True)
    assert abs(data_miss_rate(paired) - data_miss_rate(bare)) < 0.02


def test_instruction_oracle_headroom(small_hierarchy):
    bare = run(small_hierarchy, MANY, "many-to-few")
    pinned = run(small_hierarchy, MANY, "many-to-few", policy="i-oracle:lru")
    assert pinned.stalls["total_cycles"] < bare.stalls["total_cycles"]

    bare = run(small_hierarchy, FEW, "few-to-many")
    pinned = run(small_hierarchy, FEW, "few-to-many", policy="i-oracle:lru")
    assert pinned.stalls["total_cycles"] == pytest.approx(bare.stalls["total_cycles"], rel=0.02)


def test_one_field_no_worse_than_none(small_hierarchy):
    def stalls(k):
        return run(small_hierarchy, MANY, "many-to-few", pairwise=True, k=k).stalls["total_cycles"]

    assert stalls(1) <= stalls(0)
