import json

import pandas as pd
import pytest

from app.cache import Level, LLCDemand, SimEvent
from app.config import RunConfig
from app.metrics import (
    CSV_COLUMNS,
    accesses_per_line,
    conditional_instruction_miss_rates,
    emit,
    instruction_access_ratio,
    reuse_distance_profile,
    write_csv,
)
from app.simulator import simulate
from app.trace import AccessKind

I, L = int(AccessKind.IFETCH), int(AccessKind.LOAD)


def d(line, instr=False):
    return LLCDemand(line, 0, 0, instr)


def ev(core, kind, level, line, pair_line=-1):
    return SimEvent(0, core, kind, int(level), 0, line, 0, pair_line=pair_line)


# ============================================================
# Reuse distance
# ============================================================
def test_reuse_counts_distinct_lines_in_between():
    # A B C B A within one set: B reused at depth 1, A at depth 2
    hist = reuse_distance_profile([d(1), d(2), d(3), d(2), d(1)], n_sets=1)
    assert hist.first_touch["data"] == 3
    assert hist.counts["data"] == {1: 1, 2: 1}
    assert hist.weighted_mean["data"] == 1.5


def test_reuse_is_per_set():
    # lines 0 and 2 go to set 0, line 1 to set 1
    hist = reuse_distance_profile([d(0), d(1), d(2), d(1), d(0)], n_sets=2)
    assert hist.counts["data"] == {0: 1, 1: 1}


def test_reuse_means_weight_hot_lines():
    stream = [d(1)] + [d(1)] * 4 + [d(2), d(3), d(2)]
    hist = reuse_distance_profile(stream, n_sets=1)
    # line 1 reuses at depth 0 four times, line 2 once at depth 1
    assert hist.weighted_mean["data"] == pytest.approx(0.2)
    assert hist.per_line_mean["data"] == pytest.approx(0.5)


def test_reuse_splits_by_class():
    hist = reuse_distance_profile([d(1, True), d(2), d(1, True)], n_sets=1)
    assert hist.counts["instruction"] == {1: 1}
    assert hist.counts["data"] == {}
    assert hist.per_line_mean["data"] is None
    assert list(hist.to_dict()["counts"]["instruction"]) == ["1"]


# ============================================================
# Access pattern
# ============================================================
def test_pattern_ignores_private_hits():
    events = [
        ev(0, I, Level.MEMORY, 1), ev(0, I, Level.PRIVATE, 1),
        ev(0, L, Level.LLC, 7), ev(0, L, Level.LLC, 7), ev(0, L, Level.MEMORY, 8),
    ]
    assert instruction_access_ratio(events) == 0.25
    assert accesses_per_line(events) == {"instruction": 1.0, "data": 1.5}


def test_pattern_of_empty_log():
    assert instruction_access_ratio([]) is None
    assert accesses_per_line([]) == {"instruction": None, "data": None}


# ============================================================
# Conditional instruction miss rates
# ============================================================
def test_pairs_instruction_with_attributed_data():
    events = [
        ev(0, I, Level.MEMORY, 10), ev(0, L, Level.LLC, 100, pair_line=10),
        ev(0, I, Level.LLC, 11), ev(0, L, Level.MEMORY, 101, pair_line=11),
        ev(0, I, Level.MEMORY, 12), ev(0, L, Level.MEMORY, 102, pair_line=12),
    ]
    rates = conditional_instruction_miss_rates(events)
    assert rates.rate_given_data_hit == 1.0
    assert rates.rate_given_data_miss == 0.5
    assert (rates.paired_with_hit, rates.paired_with_miss) == (1, 2)


def test_unattributed_and_cross_core_data_not_paired():
    events = [
        ev(0, I, Level.MEMORY, 10),
        ev(1, L, Level.LLC, 100, pair_line=10),
        ev(0, L, Level.LLC, 101),
        ev(0, L, Level.PRIVATE, 102, pair_line=10),
    ]
    rates = conditional_instruction_miss_rates(events)
    assert rates.rate_given_data_hit is None and rates.rate_given_data_miss is None


def test_each_instruction_access_pairs_once():
    events = [
        ev(0, I, Level.MEMORY, 10),
        ev(0, L, Level.LLC, 100, pair_line=10),
        ev(0, L, Level.LLC, 101, pair_line=10),
    ]
    assert conditional_instruction_miss_rates(events).paired_with_hit == 1


# ============================================================
# Report / emit
# ============================================================
@pytest.fixture
def generated_cfg():
    from app.config import parse_config

    return parse_config({
        "generator": {"name": "many-to-few", "n_instr_lines": 1024, "n_data_lines": 128,
                      "cores": 2, "instructions_per_core": 2000, "rng_seed": 3},
        "hierarchy": {"private": {"capacity_bytes": 4096, "associativity": 4},
                      "llc": {"capacity_bytes": 98304}},
    })


def test_report_levels_add_up(generated_cfg):
    report = simulate(generated_cfg).report
    for cls in ("instruction", "data"):
        lv = report.levels[cls]
        assert lv["accesses"] == lv["private_hits"] + lv["llc_hits"] + lv["llc_misses"]
    assert report.records == sum(lv["accesses"] for lv in report.levels.values())
    assert report.protections == {"queries": 0, "granted": 0, "denied": 0, "qbs_cycles": 0}


def test_json_report_is_stable(tmp_path, generated_cfg):
    a = emit(simulate(generated_cfg).report, "json", tmp_path / "a.json")
    b = emit(simulate(generated_cfg).report, "json", tmp_path / "b.json")
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    assert len(data["config_digest"]) == 16


def test_csv_has_fixed_columns(tmp_path, generated_cfg):
    report = simulate(generated_cfg).report
    path = emit(report, "csv", tmp_path / "report.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == CSV_COLUMNS
    assert frame.loc[0, "csv_schema"] == 1
    assert frame.loc[0, "data_accesses"] == report.levels["data"]["accesses"]


def test_csv_rows_keep_order(tmp_path):
    report_rows = [{"axis": "k", "value": v} for v in (2, 0, 1)]
    frame = pd.read_csv(write_csv(report_rows, tmp_path / "rows.csv"))
    assert frame["value"].tolist() == [2, 0, 1]


def test_unknown_emit_format(tmp_path, generated_cfg):
    with pytest.raises(ValueError, match="valid: json, csv"):
        emit(simulate(generated_cfg).report, "xml", tmp_path / "r.xml")


def test_pairwise_report_carries_storage_and_trajectory(generated_cfg):
    from dataclasses import replace

    from app.pairwise import PairwiseConfig

    cfg = replace(generated_cfg, pairwise=PairwiseConfig(enabled=True, period_n=500))
    report = simulate(cfg).report
    assert report.pairwise
    assert report.storage["total_bytes"] > 0
    assert report.threshold_trajectory
    assert report.protections["granted"] <= report.protections["queries"]
    assert report.prefetch["useful"] <= report.prefetch["issued"]


def test_disabled_pairwise_block_changes_nothing(generated_cfg):
    from dataclasses import replace

    from app.pairwise import PairwiseConfig

    off = replace(generated_cfg, pairwise=PairwiseConfig(enabled=False, k=4, threshold_init=5))
    assert simulate(off).report == simulate(generated_cfg).report


def test_reuse_matches_set_scan():
    import numpy as np

    rng = np.random.default_rng(8)
    lines = rng.integers(0, 60, 3000).tolist()
    n_sets = 4
    hist = reuse_distance_profile([d(x) for x in lines], n_sets)

    expected = {}
    last = {}
    for t, line in enumerate(lines):
        if line in last:
            between = {x for x in lines[last[line] + 1:t] if x % n_sets == line % n_sets and x != line}
            expected[len(between)] = expected.get(len(between), 0) + 1
        last[line] = t
    assert hist.counts["data"] == expected
    assert hist.first_touch["data"] == len(set(lines))


@pytest.mark.slow
@pytest.mark.parametrize("policy", ["lru", "drrip", "hawkeye", "mockingjay"])
def test_disabled_pairwise_changes_nothing_under_any_policy(policy):
    from dataclasses import replace

    from app.config import parse_config
    from app.pairwise import PairwiseConfig

    for seed in range(20):
        bare = parse_config({
            "generator": {"name": "many-to-few", "n_instr_lines": 256, "n_data_lines": 32,
                          "cores": 2, "instructions_per_core": 400, "rng_seed": seed,
                          "stream_fraction": 0.3, "n_stream_lines": 256},
            "hierarchy": {"private": {"capacity_bytes": 1024, "associativity": 4},
                          "llc": {"capacity_bytes": 8192, "associativity": 8}},
            "policy": policy,
        })
        off = replace(bare, pairwise=PairwiseConfig(enabled=False, k=3, threshold_init=1,
                                                    qbs_max_attempts=8))
        assert simulate(off).report == simulate(bare).report
