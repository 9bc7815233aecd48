"""Run configuration: a JSON-serializable description of one training run.

The schema is flat JSON with nested blocks mirroring the library objects they
configure. ``RunConfig.from_dict`` validates eagerly and raises
:class:`ConfigError` naming the offending field, so the CLI can print a
pointed diagnostic and exit with the config-error code.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .feedforward import ActorConfig, BatchConfig

LEARNERS = ("ffw", "rnn")
METRICS_SCHEMA = "v1"


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field {field_name!r}: {message}")
        self.field_name = field_name


@dataclass
class NNConfig:
    hidden: tuple[int, ...] = (64, 64)  # feedforward stack widths
    hidden_dim: int = 32                # recurrent state width
    cell: str = "lstm"
    optimizer: str = "adam"
    lr: float | None = None
    loss: str | None = None             # None -> head default
    head: str | None = None             # None -> action-kind default
    feeding: str = "per_step"
    autoregressive: bool = False
    bptt_window: int = 32
    end_marker_mode: bool = False


@dataclass
class ReplayConfig:
    capacity: int | None = None
    selection: str = "all"


@dataclass
class SchemeConfig:
    kind: str = "identity"
    gamma: float = 0.9
    scale: float | None = None  # None -> the environment's max episode length


@dataclass
class RunConfig:
    env_name: str = "grid_world"
    env_params: dict = field(default_factory=dict)
    learner: str = "ffw"
    seed: int = 0
    trials: int = 100
    epochs_per_trial: int = 1
    actor: ActorConfig = field(default_factory=ActorConfig)
    nn: NNConfig = field(default_factory=NNConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    batch: BatchConfig = field(default_factory=BatchConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    checkpoint_every: int = 0  # 0 -> final checkpoint only
    parallel: bool = False

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ConfigError("learner", f"must be one of {LEARNERS}")
        if self.trials < 1:
            raise ConfigError("trials", "must be positive")
        if self.epochs_per_trial < 1:
            raise ConfigError("epochs_per_trial", "must be positive")

    # -- dict/JSON forms ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "env": {"name": self.env_name, "params": dict(self.env_params)},
            "learner": self.learner,
            "seed": self.seed,
            "trials": self.trials,
            "epochs_per_trial": self.epochs_per_trial,
            "actor": asdict(self.actor),
            "nn": {**asdict(self.nn), "hidden": list(self.nn.hidden)},
            "replay": asdict(self.replay),
            "batch": {**asdict(self.batch), "mix": list(self.batch.mix)},
            "scheme": asdict(self.scheme),
            "checkpoint_every": self.checkpoint_every,
            "parallel": self.parallel,
            "metrics_schema": METRICS_SCHEMA,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known_top = {"env", "learner", "seed", "trials", "epochs_per_trial", "actor",
                     "nn", "replay", "batch", "scheme", "checkpoint_every", "parallel",
                     "metrics_schema"}
        unknown = set(d) - known_top
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")

        env = d.get("env", {})
        if not isinstance(env, dict) or "name" not in env:
            raise ConfigError("env.name", "required")

        def raw_block(name):
            raw = d.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(name, "must be an object")
            return dict(raw)

        nn_raw = raw_block("nn")
        if "hidden" in nn_raw:
            nn_raw["hidden"] = tuple(nn_raw["hidden"])
        batch_raw = raw_block("batch")
        if "mix" in batch_raw:
            batch_raw["mix"] = tuple(batch_raw["mix"])

        actor = _build("actor", ActorConfig, asdict(ActorConfig()), raw_block("actor"))
        nn = _build("nn", NNConfig, asdict(NNConfig()), nn_raw)
        replay = _build("replay", ReplayConfig, asdict(ReplayConfig()), raw_block("replay"))
        batch = _build("batch", BatchConfig, asdict(BatchConfig()), batch_raw)
        scheme = _build("scheme", SchemeConfig, asdict(SchemeConfig()), raw_block("scheme"))

        try:
            return cls(
                env_name=env["name"],
                env_params=dict(env.get("params", {})),
                learner=d.get("learner", "ffw"),
                seed=int(d.get("seed", 0)),
                trials=int(d.get("trials", 100)),
                epochs_per_trial=int(d.get("epochs_per_trial", 1)),
                actor=actor,
                nn=nn,
                replay=replay,
                batch=batch,
                scheme=scheme,
                checkpoint_every=int(d.get("checkpoint_every", 0)),
                parallel=bool(d.get("parallel", False)),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("<top-level>", str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<json>", f"not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("<json>", "top level must be an object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def _build(name, expected_cls, defaults, raw):
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}.{sorted(unknown)[0]}", "unknown field")
    merged = {**defaults, **raw}
    try:
        return expected_cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc
