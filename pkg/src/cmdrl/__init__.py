"""Command-conditioned control through supervised learning.

Policies learn to map (observations, command) pairs to actions, where a
command says "achieve this much reward within this much time" (optionally
"more than this much", optionally "and end up here"). Training data comes
from hindsight: every segment of every stored episode is relabeled with the
command it factually satisfied. Feedforward policies cover Markovian worlds,
recurrent ones carry memory for partially observable worlds, and a distiller
compresses successful commanded behavior into a command-free policy.
"""

from .core import (
    MORETHAN_FRACTIONS,
    Command,
    Episode,
    HorizonScheme,
    SegmentSample,
    Transition,
    encode_horizon,
    load_episodes,
    make_command,
    relabel_goal,
    relabel_morethan,
    relabel_segment,
    save_episodes,
)
from .envs import (
    EnvSpec,
    Environment,
    GridWorld,
    ObstacleLine,
    StochasticGrid,
    TMaze,
    fork_world,
    load_env_file,
    load_world_text,
    make_env,
    play_script,
    shortest_grid_script,
)
from .feedforward import (
    ActorConfig,
    BatchConfig,
    CommandPolicy,
    EstimateMissingError,
    RewardTable,
    TabularModel,
    TrainState,
    act,
    dp_expected_return,
    relabel_expected,
    run_commanded_trial,
    run_trial,
    train_epoch,
    update_reward_table,
)
from .nn import (
    Adam,
    DivergenceError,
    FeedforwardNet,
    OutputHead,
    RecurrentNet,
    SGD,
    bptt_step,
    grad_check,
    train_step,
)
from .recurrent import (
    RecurrentCommandPolicy,
    achieved_prefix_commands,
    act_autoregressive,
    autoregressive_joint,
    run_commanded_trial_rnn,
    run_trial_rnn,
    train_epoch_rnn,
)
from .distill import (
    CommandFreePolicy,
    DistillConfig,
    NothingToDistillError,
    distill,
    fidelity,
    rollout_command_free,
    structural_audit,
)
from .replay import NoDataError, ReplayBuffer, enumerate_pairs, sample_batch
from .config import ConfigError, RunConfig
from .training import EvalSummary, evaluate, load_policy, run_training
from .rng import counter_rng

__version__ = "0.1.0"
