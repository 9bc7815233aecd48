import numpy as np
import pytest

from cmdrl.core import Episode, HorizonScheme, make_command
from cmdrl.envs import EnvSpec, GridWorld, TMaze, play_script
from cmdrl.feedforward import ActorConfig, BatchConfig, TrainState
from cmdrl.nn import Adam, sigmoid
from cmdrl.recurrent import (
    RecurrentCommandPolicy,
    achieved_prefix_commands,
    act_autoregressive,
    autoregressive_joint,
    episode_history,
    replay_prefix_state,
    run_commanded_trial_rnn,
    run_trial_rnn,
    train_epoch_rnn,
    zeroed_command,
    _sequence_for_sample,
)
from cmdrl.replay import ReplayBuffer, sample_batch
from cmdrl.rng import STREAM_LEARNER, counter_rng

from test_core import scalar_episode

IDENT = HorizonScheme("identity")


def tmaze_policy(seed=0, hidden=32):
    env = TMaze()
    scheme = HorizonScheme("identity", scale=float(env.spec.max_steps))
    return env, RecurrentCommandPolicy(env.spec, scheme, hidden_dim=hidden, seed=seed)


def tmaze_seeds_by_side(n=10):
    left = [s for s in range(400) if TMaze().reset(s)[0] == 1.0][:n]
    right = [s for s in range(400) if TMaze().reset(s)[1] == 1.0][:n]
    return left, right


def scripted_tmaze(seed):
    env = TMaze()
    env.reset(seed)
    turn = 1 if env.goal_side == 0 else 2
    return play_script(TMaze(), seed, [0, 0, 0, turn])


# -- retroactive command history ----------------------------------------------------


def test_achieved_prefix_commands_have_zero_horizons():
    ep = scalar_episode([1.0, 0.0, 2.0])
    for cmd in achieved_prefix_commands(ep, 4):
        assert np.array_equal(cmd.horizon, np.zeros(1))
        assert cmd.raw_steps == 0
        assert cmd.morethan == 0 and cmd.marker == 0
        assert cmd.goal_obs is None


def test_achieved_prefix_commands_read_off_realized_rewards():
    ep = scalar_episode([1.0, 0.0, 2.0])
    cmds = achieved_prefix_commands(ep, 4)
    assert [float(c.desire[0]) for c in cmds] == [1.0, 0.0, 2.0]


def test_achieved_prefix_commands_empty_before_step_one():
    ep = scalar_episode([1.0])
    assert achieved_prefix_commands(ep, 1) == []


def test_achieved_prefix_commands_are_pure_functions_of_the_episode():
    ep = scalar_episode([0.3, -1.0])
    a = achieved_prefix_commands(ep, 3)
    b = achieved_prefix_commands(ep, 3)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.desire, cb.desire)
        assert np.array_equal(ca.horizon, cb.horizon)


def test_episode_history_matches_prefix_command_source():
    env, policy = tmaze_policy()
    ep = scripted_tmaze(3)
    steps = episode_history(policy, ep)
    cmds = achieved_prefix_commands(ep, ep.length + 1)
    assert len(steps) == ep.length
    for hs, cmd in zip(steps, cmds):
        assert np.array_equal(hs.command.desire, cmd.desire)
        assert hs.command.marker == 0


# -- training sequences and masks ------------------------------------------------------


def test_sequence_mask_trains_only_the_commanded_step():
    env, policy = tmaze_policy()
    ep = scripted_tmaze(5)
    buf = ReplayBuffer()
    buf.add_episode(ep)
    for s in sample_batch(buf, 20, (1.0, 0.0, 0.0), policy.scheme, counter_rng(1)):
        xs, ts, ms = _sequence_for_sample(policy, ep, s)
        assert len(xs) == s.k  # prefix plus the trained step
        assert ms[-1] == 1.0
        assert np.all(ms[:-1] == 0.0)


def test_k1_sample_reduces_to_single_step_sequence():
    env, policy = tmaze_policy()
    ep = scripted_tmaze(5)
    from cmdrl.core import relabel_segment

    s = relabel_segment(ep, 1, 2, policy.scheme)
    xs, ts, ms = _sequence_for_sample(policy, ep, s)
    assert xs.shape[0] == 1
    assert ms.tolist() == [1.0]


def test_bptt_window_truncates_long_prefixes():
    env = TMaze(max_steps=60)
    scheme = HorizonScheme("identity", scale=60.0)
    policy = RecurrentCommandPolicy(env.spec, scheme, hidden_dim=8, bptt_window=8, seed=0)
    ep = play_script(env, 3, [1] * 40)  # dawdle forever
    from cmdrl.core import relabel_segment

    s = relabel_segment(ep, 30, 35, policy.scheme)
    xs, ts, ms = _sequence_for_sample(policy, ep, s)
    assert len(xs) == 8
    assert ms[-1] == 1.0 and np.all(ms[:-1] == 0.0)


def test_overfit_scripted_tmaze_reaches_criterion_and_matches_cue():
    left, right = tmaze_seeds_by_side()
    env, policy = tmaze_policy(seed=0)
    buf = ReplayBuffer()
    for s in left + right:
        buf.add_episode(scripted_tmaze(s))
    opt = Adam(policy.net.params(), lr=3e-3)
    rng = counter_rng(0, STREAM_LEARNER)
    bc = BatchConfig(batch_size=32, batches_per_epoch=4, mix=(1.0, 0.0, 0.0))
    loss = np.inf
    for _ in range(300):
        loss = train_epoch_rnn(policy, buf, bc, opt, rng)
    assert loss < 0.1

    cmd = make_command(0, [1.0], policy.scheme)
    outs = {}
    for name, seed in (("L", left[0]), ("R", right[0])):
        ep = scripted_tmaze(seed)
        obs = [ep.observation_at(k) for k in range(1, 5)]
        acts = [ep.action_at(k) for k in range(1, 5)]
        rews = [tr.reward for tr in ep.transitions]
        state = replay_prefix_state(policy, obs, acts, rews, 4, None)
        x = policy.base_input(ep.transitions[3].prev_action, ep.observation_at(4),
                              ep.reward_input_at(4), cmd)
        y, _ = policy.net.step(x[None, :], state)
        outs[name] = policy.head.transform(y[0])
    # junction action follows the cue that sits 3 steps back in the prefix
    assert int(np.argmax(outs["L"])) == TMaze.ACT_LEFT
    assert int(np.argmax(outs["R"])) == TMaze.ACT_RIGHT
    # same junction observation, same command: only the prefix differs
    assert np.linalg.norm(outs["L"] - outs["R"]) > 0.5


# -- acting ------------------------------------------------------------------------------


def test_untrained_tmaze_goal_rate_is_chance_level():
    env, policy = tmaze_policy(seed=9)
    wins = 0
    n = 1000
    for i in range(n):
        state = TrainState()
        state.best_return = 1.0
        ep = run_trial_rnn(TMaze(), policy, ActorConfig(explore_fraction=0.0), state,
                           None, 5000 + i, explore=False)
        wins += ep.scalar_return() >= 1.0
    assert abs(wins / n - 0.5) < 0.05


def test_run_trial_rnn_is_deterministic_given_seed():
    env, policy = tmaze_policy(seed=4)

    def run():
        state = TrainState()
        ep = run_trial_rnn(TMaze(), policy.clone(), ActorConfig(), state, None, 77)
        return ep.to_arrays()

    assert run() == run()


def _live_marker_sequence(env, policy, run):
    """Marker of the command live at each env step (the base_input call
    immediately preceding the step; earlier calls are prefix replays)."""
    last_marker = [None]
    live = []
    original_input = policy.base_input
    original_step = env.step

    def spy_input(prev_action, observation, reward_in, command):
        last_marker[0] = command.marker
        return original_input(prev_action, observation, reward_in, command)

    def spy_step(action):
        live.append(last_marker[0])
        return original_step(action)

    policy.base_input = spy_input
    env.step = spy_step
    run(env, policy)
    return live


def test_live_marker_sequence_per_step_mode_is_all_ones():
    env, policy = tmaze_policy(seed=1)
    maze = TMaze()
    live = _live_marker_sequence(
        maze, policy,
        lambda e, p: run_commanded_trial_rnn(e, p, 1.0, 3, False, 3, select="sample"))
    assert len(live) >= 2
    assert all(m == 1 for m in live)


def test_live_marker_sequence_initial_mode_is_one_then_zeros():
    env = TMaze()
    scheme = HorizonScheme("identity", scale=float(env.spec.max_steps))
    policy = RecurrentCommandPolicy(env.spec, scheme, hidden_dim=8, seed=1,
                                    feeding="initial_only")

    def run(e, p):
        state = TrainState()
        state.best_return = 1.0
        run_trial_rnn(e, p, ActorConfig(explore_fraction=0.0), state, None, 11,
                      explore=False)

    live = _live_marker_sequence(TMaze(), policy, run)
    assert len(live) >= 2
    assert live[0] == 1
    assert all(m == 0 for m in live[1:])


def test_hidden_reset_ablation_forgets_the_cue():
    left, right = tmaze_seeds_by_side()
    env, policy = tmaze_policy(seed=0)
    buf = ReplayBuffer()
    for s in left + right:
        buf.add_episode(scripted_tmaze(s))
    opt = Adam(policy.net.params(), lr=3e-3)
    rng = counter_rng(0, STREAM_LEARNER)
    bc = BatchConfig(batch_size=32, batches_per_epoch=4, mix=(1.0, 0.0, 0.0))
    for _ in range(200):
        train_epoch_rnn(policy, buf, bc, opt, rng)
    wins = wins_ablated = 0
    n = 200
    for i in range(n):
        ep = run_commanded_trial_rnn(TMaze(), policy, 1.0, 3, False, 9000 + i,
                                     select="greedy")
        wins += ep.scalar_return() >= 1.0
        ep = run_commanded_trial_rnn(TMaze(), policy, 1.0, 3, False, 9000 + i,
                                     select="sample", reset_hidden_each_step=True)
        wins_ablated += ep.scalar_return() >= 1.0
    assert wins / n > 0.9
    assert wins_ablated / n < 0.65


# -- autoregressive micro steps --------------------------------------------------------------


def pattern_spec(o=2):
    return EnvSpec(m=1, n=1, o=o, action_kind="multi_binary", max_steps=1, markovian=True)


def pattern_episode(bits, seed):
    return Episode.from_arrays([[1.0], [1.0]], [list(bits)], [[1.0]], "pattern", seed)


def test_autoregressive_o1_reduces_to_plain_sigmoid_sampling():
    policy = RecurrentCommandPolicy(pattern_spec(o=1), IDENT, hidden_dim=8,
                                    autoregressive=True, seed=3)
    cmd = make_command(0, [1.0], IDENT)
    base = policy.base_input(np.zeros(1), np.array([1.0]), np.zeros(1), cmd)
    x = np.concatenate([base, [0.0]])
    y, _ = policy.net.step(x[None, :], policy.net.initial_state(1))
    p = float(sigmoid(y[0])[0])
    rng = counter_rng(42)
    draws = [act_autoregressive(policy, policy.net.initial_state(1), np.zeros(1),
                                np.array([1.0]), np.zeros(1), cmd, rng)[0][0]
             for _ in range(4000)]
    assert abs(np.mean(draws) - p) < 0.03


@pytest.mark.parametrize("o", [2, 3, 4])
def test_autoregressive_joint_sums_to_one(o):
    policy = RecurrentCommandPolicy(pattern_spec(o=o), IDENT, hidden_dim=8,
                                    autoregressive=True, seed=o)
    cmd = make_command(0, [1.0], IDENT)
    joint = autoregressive_joint(policy, policy.net.initial_state(1), np.zeros(o),
                                 np.array([1.0]), np.zeros(1), cmd)
    assert len(joint) == 2**o
    assert abs(sum(joint.values()) - 1.0) < 1e-6


def test_trained_pattern_sampler_avoids_forbidden_patterns():
    policy = RecurrentCommandPolicy(pattern_spec(), IDENT, hidden_dim=16,
                                    autoregressive=True, seed=0)
    buf = ReplayBuffer()
    for i in range(20):
        buf.add_episode(pattern_episode((0.0, 0.0), 100 + i))
        buf.add_episode(pattern_episode((1.0, 1.0), 200 + i))
    opt = Adam(policy.net.params(), lr=3e-3)
    rng = counter_rng(0, STREAM_LEARNER)
    bc = BatchConfig(batch_size=32, batches_per_epoch=4, mix=(1.0, 0.0, 0.0))
    for _ in range(300):
        train_epoch_rnn(policy, buf, bc, opt, rng)
    cmd = make_command(0, [1.0], IDENT)
    joint = autoregressive_joint(policy, policy.net.initial_state(1), np.zeros(2),
                                 np.array([1.0]), np.zeros(1), cmd)
    assert joint[(0.0, 1.0)] + joint[(1.0, 0.0)] < 0.05
    # learned conditional matches the data's: components always agree
    p11 = joint[(1.0, 1.0)] / (joint[(1.0, 0.0)] + joint[(1.0, 1.0)])
    assert p11 > 0.95


# -- feeding-mode comparison --------------------------------------------------------------------


def test_initial_command_mode_trains_close_to_per_step_mode():
    from cmdrl.config import RunConfig
    from cmdrl.training import evaluate, load_policy, run_training

    params = {"width": 3, "height": 3, "goal": [2, 2], "max_steps": 20}
    rates = {}
    for feeding in ("per_step", "initial_only"):
        cfg = RunConfig.from_dict({
            "env": {"name": "grid_world", "params": params}, "learner": "rnn", "seed": 0,
            "trials": 200, "epochs_per_trial": 1,
            "actor": {"explore_fraction": 0.25},
            "nn": {"hidden_dim": 32, "cell": "lstm", "feeding": feeding},
            "replay": {"capacity": 30, "selection": "top_k_by_return"},
            "batch": {"batch_size": 32, "batches_per_epoch": 4, "mix": [1.0, 0.0, 0.0]},
        })
        out = pytest.importorskip("tempfile").mkdtemp()
        res = run_training(cfg, out)
        policy = load_policy(res.final_checkpoint)
        env = GridWorld(**{k: (tuple(v) if isinstance(v, list) else v)
                           for k, v in params.items()})
        s = evaluate(env, policy, res.best_return, res.best_length - 1, False, 100, 123)
        rates[feeding] = s.satisfaction_rate
    assert rates["initial_only"] >= rates["per_step"] - 0.15


# -- checkpointing ----------------------------------------------------------------------------


def test_recurrent_policy_checkpoint_roundtrip(tmp_path):
    env, policy = tmaze_policy(seed=6)
    policy.desire_scale = 2.5
    path = tmp_path / "rnn.ckpt"
    policy.save(path)
    back = RecurrentCommandPolicy.load(path)
    assert back.feeding == policy.feeding
    assert back.desire_scale == 2.5
    assert back.bptt_window == policy.bptt_window
    cmd = make_command(2, [1.0], policy.scheme)
    x = policy.base_input(np.zeros(3), env.reset(0), np.zeros(1), cmd)
    ya, _ = policy.net.step(x[None, :], policy.net.initial_state(1))
    yb, _ = back.net.step(x[None, :], back.net.initial_state(1))
    assert np.array_equal(ya, yb)


def test_zeroed_command_is_dead_input():
    cmd = zeroed_command(1)
    assert cmd.marker == 0 and cmd.morethan == 0
    assert np.array_equal(cmd.desire, np.zeros(1))
    assert np.array_equal(cmd.horizon, np.zeros(1))
