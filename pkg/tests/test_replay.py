import numpy as np
import pytest

from cmdrl.core import HorizonScheme, relabel_segment
from cmdrl.replay import NoDataError, ReplayBuffer, enumerate_pairs, sample_batch
from cmdrl.rng import counter_rng

from test_core import scalar_episode

IDENT = HorizonScheme("identity")


def episode_with_return(total, length=2, seed=0):
    per = total / length
    return scalar_episode([per] * length, seed=seed)


# -- buffer ------------------------------------------------------------------


def test_add_to_empty_buffer():
    buf = ReplayBuffer()
    buf.add_episode(scalar_episode([1.0]))
    assert len(buf) == 1


def test_top_k_eviction_keeps_highest_returns():
    buf = ReplayBuffer(capacity=2, selection="top_k_by_return")
    buf.add_episode(episode_with_return(5.0, seed=1))
    buf.add_episode(episode_with_return(1.0, seed=2))
    buf.add_episode(episode_with_return(3.0, seed=3))
    assert sorted(buf.returns()) == pytest.approx([3.0, 5.0])


def test_recent_w_eviction_is_fifo():
    buf = ReplayBuffer(capacity=2, selection="recent_w")
    for seed, ret in enumerate((5.0, 1.0, 3.0)):
        buf.add_episode(episode_with_return(ret, seed=seed))
    assert buf.returns() == pytest.approx([1.0, 3.0])


def test_top_k_minimum_stored_return_is_nondecreasing():
    buf = ReplayBuffer(capacity=5, selection="top_k_by_return")
    rng = counter_rng(42)
    last_min = -np.inf
    for seed in range(60):
        buf.add_episode(episode_with_return(float(rng.normal()), seed=seed))
        if len(buf) == 5:
            assert buf.min_return() >= last_min - 1e-12
            last_min = buf.min_return()


def test_buffer_policy_validation():
    with pytest.raises(ValueError):
        ReplayBuffer(selection="priority")
    with pytest.raises(ValueError):
        ReplayBuffer(capacity=3, selection="all")
    with pytest.raises(ValueError):
        ReplayBuffer(selection="top_k_by_return")


def test_buffer_save_load_roundtrip(tmp_path):
    buf = ReplayBuffer()
    buf.add_episode(scalar_episode([1.0, -0.5], seed=3))
    buf.add_episode(scalar_episode([2.0], seed=4))
    path = tmp_path / "episodes.jsonl"
    buf.save(path)
    other = ReplayBuffer()
    other.load(path)
    assert len(other) == 2
    assert other.returns() == pytest.approx(buf.returns())


# -- pair enumeration -----------------------------------------------------------


def test_enumerate_pairs_single_step():
    assert enumerate_pairs(1) == [(1, 1)]


def test_enumerate_pairs_t3_explicit():
    assert enumerate_pairs(3) == [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]


def test_enumerate_pairs_count_identity_up_to_200():
    for T in range(1, 201):
        assert len(enumerate_pairs(T)) == T * (T + 1) // 2


def test_enumerate_pairs_thousand_steps_is_half_a_million():
    assert len(enumerate_pairs(1000)) == 500_500


# -- sampling ---------------------------------------------------------------------


def filled_buffer():
    buf = ReplayBuffer()
    buf.add_episode(scalar_episode([1.0, 0.0, 2.0], seed=1))
    buf.add_episode(scalar_episode([0.5, -1.0], seed=2))
    return buf


def test_sample_batch_pure_exact_mix():
    batch = sample_batch(filled_buffer(), 200, (1.0, 0.0, 0.0), IDENT, counter_rng(0))
    assert len(batch) == 200
    for s in batch:
        assert s.command.morethan == 0
        assert s.command.goal_obs is None


def test_sample_batch_morethan_fraction_distribution():
    buf = ReplayBuffer()
    buf.add_episode(scalar_episode([4.0], seed=1))  # single pair, reward 4
    batch = sample_batch(buf, 10_000, (0.0, 1.0, 0.0), IDENT, counter_rng(5))
    counts = {2.0: 0, 3.0: 0, 3.5: 0}  # 4 * {1/2, 3/4, 7/8}
    for s in batch:
        counts[round(float(s.command.desire[0]), 6)] += 1
    for c in counts.values():
        assert abs(c - 10_000 / 3) < 200


def test_sample_batch_goal_mix_sets_goal_obs():
    batch = sample_batch(filled_buffer(), 50, (0.0, 0.0, 1.0), IDENT, counter_rng(1))
    for s in batch:
        assert s.command.goal_obs is not None


def test_sampling_eventually_draws_every_pair_of_a_small_episode():
    buf = ReplayBuffer()
    buf.add_episode(scalar_episode([1.0, 0.0, 2.0], seed=9))
    want = set(enumerate_pairs(3))
    seen = set()
    rng = counter_rng(7)
    for _ in range(40):
        for s in sample_batch(buf, 10, (1.0, 0.0, 0.0), IDENT, rng):
            seen.add((s.k, s.j))
        if seen == want:
            break
    assert seen == want


def test_every_sample_passes_the_desire_recomputation_oracle():
    buf = filled_buffer()
    episodes = {ep.ref: ep for ep in buf.snapshot()}
    batch = sample_batch(buf, 300, (0.6, 0.3, 0.1), IDENT, counter_rng(3))
    for s in batch:
        ep = episodes[s.episode_ref]
        exact = ep.reward_sum(s.k, s.j)[0]
        if s.command.morethan:
            assert s.command.desire[0] <= exact + 1e-12
            assert any(
                abs(s.command.desire[0] - (exact - (1 - f) * abs(exact))) < 1e-9
                for f in (0.5, 0.75, 0.875)
            )
        else:
            assert s.command.desire[0] == pytest.approx(exact)
        assert s.command.raw_steps == s.j - s.k
        assert np.array_equal(s.target_action, ep.action_at(s.k))


def test_sampled_mix_fractions_are_respected():
    batch = sample_batch(filled_buffer(), 6000, (0.5, 0.3, 0.2), IDENT, counter_rng(11))
    n_more = sum(1 for s in batch if s.command.morethan)
    n_goal = sum(1 for s in batch if s.command.goal_obs is not None)
    assert abs(n_more - 1800) < 150
    assert abs(n_goal - 1200) < 150


def test_custom_exact_relabeler_is_used():
    calls = []

    def spy(ep, k, j, scheme):
        calls.append((k, j))
        return relabel_segment(ep, k, j, scheme)

    sample_batch(filled_buffer(), 5, (1.0, 0.0, 0.0), IDENT, counter_rng(2),
                 exact_relabeler=spy)
    assert len(calls) == 5


def test_empty_buffer_signals_no_data():
    with pytest.raises(NoDataError):
        sample_batch(ReplayBuffer(), 4, (1.0, 0.0, 0.0), IDENT, counter_rng(0))


def test_bad_mix_rejected():
    with pytest.raises(ValueError):
        sample_batch(filled_buffer(), 4, (0.5, 0.2, 0.2), IDENT, counter_rng(0))
