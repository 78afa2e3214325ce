import numpy as np
import pytest

from app.belady import INF, BeladyPolicy, belady_annotate, next_uses
from app.cache import CacheGeometry, replay_llc
from app.replacement import make_online_policy


def test_next_uses():
    assert next_uses([1, 2, 1, 3, 2]) == [2, 4, INF, INF, INF]


def test_textbook_sequence():
    # A B C A B, 2 ways: C is not kept since A and B come back sooner
    labels, _ = belady_annotate([1, 2, 3, 1, 2], 1, 2)
    assert labels.would_hit == [False, False, False, True, True]
    assert labels.misses == 3
    assert labels.bypassed[2]


def test_eviction_names_farthest_line():
    labels, _ = belady_annotate([1, 2, 3, 2, 3, 1], 1, 2)
    # at 3: 1 is needed at 5, 2 at 3, so 1 goes
    assert labels.victims[2] == 1


def test_policy_replay_matches_labels():
    rng = np.random.default_rng(11)
    lines = rng.integers(0, 64, 5000).tolist()
    geometry = CacheGeometry(4 * 4 * 64, 4)
    labels, _ = belady_annotate(lines, geometry.n_sets, geometry.associativity)
    result = replay_llc(lines, geometry, BeladyPolicy(lines))
    assert result.misses == labels.misses
    assert result.hits == labels.would_hit


@pytest.mark.parametrize("policy", ["lru", "drrip", "hawkeye", "mockingjay"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_no_policy_beats_min(policy, seed):
    rng = np.random.default_rng(seed)
    # mix of a hot set and a long tail
    lines = np.where(rng.random(3000) < 0.6, rng.integers(0, 24, 3000), rng.integers(0, 400, 3000)).tolist()
    geometry = CacheGeometry(8 * 4 * 64, 4)
    labels, _ = belady_annotate(lines, geometry.n_sets, geometry.associativity)
    online = replay_llc(lines, geometry, make_online_policy(policy))
    assert labels.misses <= online.misses


def test_chunked_labeling_matches_single_pass():
    rng = np.random.default_rng(5)
    lines = rng.integers(0, 100, 4000).tolist()
    whole, _ = belady_annotate(lines, 4, 4)

    first, state = belady_annotate(lines, 4, 4, stop=1700)
    rest, _ = belady_annotate(lines, 4, 4, state=state, start=1700)
    assert first.would_hit + rest.would_hit == whole.would_hit
    assert first.victims + rest.victims == whole.victims


def test_checkpoint_state_is_not_mutated():
    lines = [1, 2, 3, 1, 2, 3]
    _, state = belady_annotate(lines, 1, 2, stop=3)
    frozen = {s: dict(r) for s, r in state.items()}
    belady_annotate(lines, 1, 2, state=state, start=3)
    assert state == frozen


@pytest.mark.slow
def test_min_dominates_online_policies_across_ways():
    rng = np.random.default_rng(200)
    for trial in range(200):
        ways = 2 + trial % 7
        geometry = CacheGeometry(4 * ways * 64, ways)
        hot = rng.integers(0, 4 * ways + 4, 600)
        tail = rng.integers(0, 300, 600)
        lines = np.where(rng.random(600) < 0.6, hot, tail).tolist()
        labels, _ = belady_annotate(lines, geometry.n_sets, geometry.associativity)
        for policy in ("lru", "drrip", "hawkeye", "mockingjay"):
            online = replay_llc(lines, geometry, make_online_policy(policy))
            assert labels.misses <= online.misses, (trial, ways, policy)
