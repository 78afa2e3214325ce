import pytest

from app.belady import belady_annotate
from app.cache import CacheGeometry, LLCDemand, replay_llc
from app.replacement import (
    CacheRequest,
    DRRIPPolicy,
    HawkeyePolicy,
    IOraclePolicy,
    LRUPolicy,
    MockingjayPolicy,
    make_online_policy,
    pc_signature,
    validate_policy_name,
)


def req(line, pc=0, prefetch=False):
    return CacheRequest(line, pc, 0, False, prefetch)


# ============================================================
# Names / registry
# ============================================================
@pytest.mark.parametrize("name", ["lru", "drrip", "hawkeye", "mockingjay", "belady", "i-oracle:lru"])
def test_known_policy_names(name):
    validate_policy_name(name)


@pytest.mark.parametrize("name", ["fifo", "i-oracle:i-oracle:lru", "i-oracle:", ""])
def test_unknown_policy_names_list_valid_set(name):
    with pytest.raises(ValueError, match="valid: lru, drrip"):
        validate_policy_name(name)


def test_oracle_wrapper_from_registry():
    policy = make_online_policy("i-oracle:drrip")
    assert isinstance(policy, IOraclePolicy)
    assert policy.pins_instructions
    assert policy.name == "i-oracle:drrip"


def test_signature_fits_table():
    assert all(0 <= pc_signature(pc, 11) < 2048 for pc in range(0, 1 << 24, 4093))


# ============================================================
# LRU
# ============================================================
def test_lru_prefetch_inserted_above_lru_position():
    p = LRUPolicy().bind(1, 4)
    for way in range(3):
        p.on_fill(0, way, req(way))
    assert p.on_fill(0, 3, req(3, prefetch=True)) == 2
    assert p.choose_victim(0, req(9)) == [0, 3, 1, 2]


def test_lru_protect_moves_to_mru():
    p = LRUPolicy().bind(1, 4)
    for way in range(4):
        p.on_fill(0, way, req(way))
    p.on_protect(0, 0)
    assert p.choose_victim(0, req(9))[0] == 1


# ============================================================
# DRRIP
# ============================================================
def test_drrip_bimodal_leader_wins_on_scan():
    ways, n_sets = 4, 64
    policy = DRRIPPolicy()
    geometry = CacheGeometry(n_sets * ways * 64, ways)
    # set 0 leads SRRIP, set 1 leads BRRIP; cyclic scan of ways + 2 lines in each
    stream = []
    for _ in range(200):
        for k in range(ways + 2):
            stream += [k * n_sets, k * n_sets + 1]
    replay_llc(stream, geometry, policy)
    assert policy.leader[0] == "srrip" and policy.leader[1] == "brrip"
    assert policy.leader_misses["brrip"] < policy.leader_misses["srrip"]


def test_drrip_victim_is_distant_line():
    p = DRRIPPolicy().bind(64, 4)
    for way in range(4):
        p.on_fill(2, way, req(way))
    p.on_hit(2, 1, req(1))
    order = p.choose_victim(2, req(9))
    assert order[-1] == 1
    assert max(p.rrpv[2]) == p.max_rrpv


# ============================================================
# Hawkeye-lite
# ============================================================
def test_hawkeye_streaming_pc_turns_averse():
    policy = HawkeyePolicy(sampled_sets=1)
    stream_pc, loop_pc = 0x7000_0040, 0x7100_0080
    demands = []
    for i in range(400):
        demands.append(LLCDemand(1000 + i, stream_pc, 0, False))
        demands.append(LLCDemand(i % 2, loop_pc, 0, False))
    replay_llc(demands, CacheGeometry(4 * 64, 4), policy)
    assert not policy.predict(stream_pc)
    assert policy.predict(loop_pc)


def test_hawkeye_unseen_pc_is_cache_friendly():
    policy = HawkeyePolicy().bind(64, 4)
    assert policy.predict(0x7000_0040)
    assert policy.predict(0)


def test_hawkeye_counters_saturate():
    policy = HawkeyePolicy().bind(64, 4)
    for _ in range(20):
        policy._train(5, True)
    assert policy.predictor[5] == policy.counter_max
    for _ in range(20):
        policy._train(5, False)
    assert policy.predictor[5] == 0


# ============================================================
# Mockingjay-lite
# ============================================================
def test_mockingjay_unknown_pc_predicts_median():
    policy = MockingjayPolicy().bind(64, 4)
    assert policy.predicted_etr(0x1234_5678) == policy.median_etr == 8


def test_mockingjay_training_moves_halfway():
    policy = MockingjayPolicy().bind(64, 4)
    policy.train(3, 20)
    assert policy.rdp[3] == 20
    policy.train(3, 10)
    assert policy.rdp[3] == 15
    policy.train(3, 16)
    assert policy.rdp[3] == 16


def test_mockingjay_prefers_overdue_then_farthest():
    policy = MockingjayPolicy().bind(1, 4)
    policy.etr[0] = [3, -2, 9, -5]
    assert policy.choose_victim(0, req(9)) == [3, 1, 2, 0]


def test_mockingjay_near_belady_on_mixed_stream():
    loop_pc, stream_pc = 0x4000_0040, 0x5000_0080
    demands = []
    for i in range(1500):
        demands.append(LLCDemand(i % 3, loop_pc, 0, False))
        demands.append(LLCDemand(100 + i, stream_pc, 0, False))
    result = replay_llc(demands, CacheGeometry(4 * 64, 4), MockingjayPolicy(sampled_sets=1))
    labels, _ = belady_annotate([d.line for d in demands], 1, 4)
    assert result.misses <= labels.misses * 1.10
