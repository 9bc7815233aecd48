import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmdrl.core import (
    MORETHAN_FRACTIONS,
    Command,
    Episode,
    HorizonScheme,
    command_input,
    encode_horizon,
    episode_from_json,
    episode_to_json,
    make_command,
    relabel_goal,
    relabel_morethan,
    relabel_segment,
    step_input,
    step_input_width,
)

IDENT = HorizonScheme("identity")


def scalar_episode(rewards, n_actions=2, env_id="toy", seed=0):
    """Episode over one-hot observations/actions with the given scalar rewards."""
    T = len(rewards)
    obs = [np.eye(4)[t % 4] for t in range(T + 1)]
    acts = [np.eye(n_actions)[t % n_actions] for t in range(T)]
    return Episode.from_arrays(obs, acts, [[r] for r in rewards], env_id, seed)


# -- horizon encodings -------------------------------------------------------


def test_encode_horizon_zero_steps_is_zero_for_every_scheme():
    for scheme in (IDENT, HorizonScheme("harmonic"), HorizonScheme("discounted", gamma=0.5)):
        assert encode_horizon(0, scheme) == pytest.approx([0.0])


def test_encode_horizon_identity():
    assert encode_horizon(5, IDENT) == pytest.approx([5.0])
    assert encode_horizon(5, HorizonScheme("identity", scale=10.0)) == pytest.approx([0.5])


def test_encode_horizon_harmonic_matches_direct_sum():
    expected = sum(1.0 / tau for tau in range(1, 4))  # 1 + 1/2 + 1/3
    got = encode_horizon(3, HorizonScheme("harmonic"))
    assert got == pytest.approx([expected])
    assert got == pytest.approx([1.833333333], abs=1e-6)


def test_encode_horizon_discounted_matches_direct_sum():
    # gamma=0.5, steps=2: 0.5*1 + 0.25*2
    assert encode_horizon(2, HorizonScheme("discounted", gamma=0.5)) == pytest.approx([1.0])


@given(st.integers(min_value=0, max_value=300))
def test_encode_horizon_monotone_identity_and_harmonic(steps):
    for kind in ("identity", "harmonic"):
        scheme = HorizonScheme(kind)
        assert encode_horizon(steps + 1, scheme)[0] >= encode_horizon(steps, scheme)[0]


def test_encode_horizon_discounted_bounded_by_closed_form():
    gamma = 0.9
    bound = gamma / (1.0 - gamma) ** 2
    scheme = HorizonScheme("discounted", gamma=gamma)
    for steps in (10, 100, 10_000):
        assert encode_horizon(steps, scheme)[0] <= bound + 1e-12
    # and the large-steps limit actually approaches the bound
    assert encode_horizon(10_000, scheme)[0] == pytest.approx(bound, rel=1e-9)


def test_horizon_scheme_validation():
    with pytest.raises(ValueError):
        HorizonScheme("discounted", gamma=1.0)
    with pytest.raises(ValueError):
        HorizonScheme("identity", scale=0.0)
    with pytest.raises(ValueError):
        HorizonScheme("linear")
    with pytest.raises(ValueError):
        encode_horizon(-1, IDENT)


# -- exact relabeling ---------------------------------------------------------


def test_relabel_segment_sums_rewards_over_inclusive_slice():
    ep = scalar_episode([1.0, 0.0, 2.0])
    full = relabel_segment(ep, 1, 3, IDENT)
    assert full.command.desire == pytest.approx([3.0])
    assert full.command.raw_steps == 2
    assert full.command.morethan == 0

    mid = relabel_segment(ep, 2, 2, IDENT)
    assert mid.command.desire == pytest.approx([0.0])
    assert mid.command.raw_steps == 0

    first = relabel_segment(ep, 1, 1, IDENT)
    assert first.command.desire == pytest.approx([1.0])


def test_relabel_segment_recovers_actions_including_last_step():
    ep = scalar_episode([1.0, 0.0, 2.0], n_actions=3)
    # actions were one-hot 0, 1, 2 in order
    for k in (1, 2, 3):
        sample = relabel_segment(ep, k, 3, IDENT)
        assert np.array_equal(sample.target_action, np.eye(3)[(k - 1) % 3])
        assert sample.history_prefix_len == k - 1


def test_relabel_segment_rejects_bad_indices():
    ep = scalar_episode([1.0, 2.0])
    for k, j in ((0, 1), (1, 3), (2, 1), (3, 3)):
        with pytest.raises(IndexError):
            relabel_segment(ep, k, j, IDENT)


def test_relabel_segment_is_pure():
    ep = scalar_episode([0.5, -1.0, 2.0])
    a = relabel_segment(ep, 1, 3, IDENT)
    b = relabel_segment(ep, 1, 3, IDENT)
    assert np.array_equal(a.command.desire, b.command.desire)
    assert np.array_equal(a.command.horizon, b.command.horizon)
    assert np.array_equal(a.target_action, b.target_action)
    assert a.episode_ref == b.episode_ref


@settings(max_examples=40)
@given(
    st.lists(st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=1, max_size=12),
    st.randoms(use_true_random=False),
)
def test_relabel_desire_matches_bruteforce_sum_for_every_pair(rewards, rnd):
    ep = scalar_episode(rewards)
    T = len(rewards)
    for k in range(1, T + 1):
        for j in range(k, T + 1):
            sample = relabel_segment(ep, k, j, IDENT)
            brute = sum(rewards[k - 1 : j])  # oracle: direct sum over raw inputs
            assert sample.command.desire[0] == pytest.approx(brute, abs=1e-9)


# -- morethan relabeling ------------------------------------------------------


def test_relabel_morethan_half_of_single_reward():
    ep = scalar_episode([4.0])
    sample = relabel_morethan(ep, 1, 1, 0.5, IDENT)
    assert sample.command.desire == pytest.approx([2.0])
    assert sample.command.morethan == 1


def test_relabel_morethan_zero_scales_to_zero():
    ep = scalar_episode([0.0, 0.0])
    for fraction in MORETHAN_FRACTIONS:
        sample = relabel_morethan(ep, 1, 2, fraction, IDENT)
        assert sample.command.desire == pytest.approx([0.0])
        assert sample.command.morethan == 1


def test_relabel_morethan_seven_eighths():
    ep = scalar_episode([8.0])
    sample = relabel_morethan(ep, 1, 1, 0.875, IDENT)
    assert sample.command.desire == pytest.approx([7.0])


def test_relabel_morethan_stays_below_negative_totals_too():
    ep = scalar_episode([-1.0, -0.5])
    sample = relabel_morethan(ep, 1, 2, 0.5, IDENT)
    # magnitude shrinks downward: -1.5 - 0.5*1.5
    assert sample.command.desire == pytest.approx([-2.25])
    assert sample.command.desire[0] < ep.reward_sum(1, 2)[0]


def test_relabel_morethan_desire_below_exact_when_nonzero():
    ep = scalar_episode([1.0, 2.0, 0.0, 3.0])
    for k in range(1, 5):
        for j in range(k, 5):
            exact = relabel_segment(ep, k, j, IDENT).command.desire[0]
            for fraction in MORETHAN_FRACTIONS:
                lowered = relabel_morethan(ep, k, j, fraction, IDENT).command.desire[0]
                if abs(exact) > 0:
                    assert lowered < exact
                else:
                    assert lowered == pytest.approx(0.0)


def test_relabel_morethan_rejects_fraction_outside_unit_interval():
    ep = scalar_episode([1.0])
    for fraction in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError):
            relabel_morethan(ep, 1, 1, fraction, IDENT)


# -- goal relabeling ----------------------------------------------------------


def test_relabel_goal_points_at_observation_after_segment():
    obs = [np.eye(8)[i] for i in (0, 3, 7, 5)]  # T=3, obs after step 2 is index 7
    acts = [np.eye(2)[i % 2] for i in range(3)]
    ep = Episode.from_arrays(obs, acts, [[0.0]] * 3, "toy", 1)
    sample = relabel_goal(ep, 1, 2, IDENT)
    assert sample.command.goal_obs is not None
    assert sample.command.goal_obs[7] == 1.0
    assert sample.command.goal_obs.sum() == 1.0


def test_relabel_goal_terminal_segment_uses_final_observation():
    obs = [np.eye(4)[i] for i in (0, 1, 2)]
    acts = [np.eye(2)[0]] * 2
    ep = Episode.from_arrays(obs, acts, [[1.0]] * 2, "toy", 2)
    sample = relabel_goal(ep, 2, 2, IDENT)
    assert np.array_equal(sample.command.goal_obs, np.eye(4)[2])


def test_relabel_goal_two_routes_same_goal_differ_only_in_action():
    # two scripted episodes reaching the same cell via different first moves
    obs_a = [np.eye(4)[i] for i in (0, 1, 3)]
    obs_b = [np.eye(4)[i] for i in (0, 2, 3)]
    acts_a = [np.eye(2)[0], np.eye(2)[1]]
    acts_b = [np.eye(2)[1], np.eye(2)[0]]
    ep_a = Episode.from_arrays(obs_a, acts_a, [[1.0], [1.0]], "toy", 3)
    ep_b = Episode.from_arrays(obs_b, acts_b, [[1.0], [1.0]], "toy", 4)
    sa = relabel_goal(ep_a, 1, 2, IDENT)
    sb = relabel_goal(ep_b, 1, 2, IDENT)
    assert np.array_equal(sa.command.goal_obs, sb.command.goal_obs)
    assert np.array_equal(sa.command.desire, sb.command.desire)
    assert sa.command.raw_steps == sb.command.raw_steps
    assert not np.array_equal(sa.target_action, sb.target_action)


# -- episode container --------------------------------------------------------


def test_episode_reward_input_is_previous_steps_consequence():
    ep = scalar_episode([1.0, 2.0, 3.0])
    assert ep.reward_input_at(1) == pytest.approx([0.0])
    assert ep.reward_input_at(2) == pytest.approx([1.0])
    assert ep.reward_input_at(3) == pytest.approx([2.0])


def test_episode_total_reward_invariant_enforced():
    tr = scalar_episode([1.0, 2.0]).transitions
    with pytest.raises(ValueError):
        Episode(
            transitions=tr,
            final_observation=np.zeros(4),
            final_action=np.eye(2)[0],
            total_reward=np.array([99.0]),
            env_id="bad",
            seed=0,
        )


def test_episode_jsonl_roundtrip_is_bit_identical():
    ep = scalar_episode([0.1, -2.5, 3.25], n_actions=3, env_id="grid", seed=17)
    back = episode_from_json(episode_to_json(ep))
    assert back.env_id == ep.env_id and back.seed == ep.seed
    assert back.length == ep.length
    for a, b in zip(ep.transitions, back.transitions):
        assert np.array_equal(a.prev_action, b.prev_action)
        assert np.array_equal(a.observation, b.observation)
        assert np.array_equal(a.reward, b.reward)
    assert np.array_equal(ep.final_observation, back.final_observation)
    assert np.array_equal(ep.final_action, back.final_action)
    # and the serialized form is plain JSON-lines material
    json.loads(episode_to_json(ep))


# -- commands and network input layout ----------------------------------------


def test_command_validation():
    with pytest.raises(ValueError):
        Command(horizon=np.zeros(1), desire=np.zeros(1), morethan=2)
    with pytest.raises(ValueError):
        Command(horizon=np.zeros(1), desire=np.zeros(1), marker=-1)
    with pytest.raises(ValueError):
        Command(horizon=np.zeros(1), desire=np.zeros(1), raw_steps=-1)
    cmd = make_command(3, [1.0], IDENT, goal_obs=np.zeros(5))
    with pytest.raises(ValueError):
        cmd.extra(m=4)  # goal length mismatch


def test_step_input_layout_and_width():
    m, n, o = 3, 1, 2
    cmd = make_command(4, [2.0], IDENT)
    x = step_input(np.array([1.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.5]), cmd, m)
    assert x.shape == (step_input_width(m, n, o),)
    # [prev_action, obs, reward_in, horizon, desire, morethan, marker, goal]
    assert x[:2].tolist() == [1.0, 0.0]
    assert x[2:5].tolist() == [0.0, 1.0, 0.0]
    assert x[5] == 0.5
    assert x[6] == 4.0  # identity horizon
    assert x[7] == 2.0  # desire
    assert x[8] == 0.0 and x[9] == 1.0  # morethan, marker
    assert np.array_equal(x[10:], np.zeros(m))


def test_desire_scaling_divides_network_input_only():
    cmd = make_command(0, [5.0], IDENT)
    x = command_input(cmd, m=2, desire_scale=10.0)
    assert x[1] == pytest.approx(0.5)
    assert cmd.desire[0] == 5.0  # command itself untouched


def test_end_marker_mode_zeroes_horizon_and_flags_window_end():
    now = make_command(0, [1.0], IDENT)
    later = make_command(6, [1.0], IDENT)
    x_now = command_input(now, m=0, end_marker_mode=True)
    x_later = command_input(later, m=0, end_marker_mode=True)
    assert x_now[0] == 0.0 and x_later[0] == 0.0  # horizon slot dead
    assert x_now[3] == 1.0  # marker flags "window ends now"
    assert x_later[3] == 0.0
