"""Operator surface: train, evaluate, command interactively, distill, inspect.

Exit codes: 0 success, 2 configuration/argument error, 3 training divergence,
4 I/O error (missing or corrupted files). Every subcommand takes --seed;
sequential-mode runs are bit-reproducible for a given seed. Subcommands write
only inside the run directory they are pointed at.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cmdrl",
        description="Train and drive command-conditioned policies "
                    "(desired reward within a time horizon).",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train per a JSON run config")
    t.add_argument("--config", required=True, help="path to the run config JSON")
    t.add_argument("--out", required=True, help="run directory to create/populate")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--parallel", action="store_true",
                   help="two-thread actor/trainer mode (non-deterministic)")

    e = sub.add_parser("eval", help="issue one command for N trials and summarize")
    e.add_argument("--checkpoint", help="policy checkpoint (default: run dir's final)")
    e.add_argument("--run-dir", help="run directory (provides env and checkpoint)")
    e.add_argument("--env", help="environment name when no run dir is given")
    e.add_argument("--env-params", default="{}", help="environment params as JSON")
    e.add_argument("--desire", type=float, required=True)
    e.add_argument("--horizon-steps", type=int, required=True,
                   help="command step count (steps remaining after the first action)")
    e.add_argument("--morethan", action="store_true",
                   help="treat desire as a lower bound instead of a target")
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--select", choices=("sample", "greedy"), default="sample")
    e.add_argument("--tolerance-frac", type=float, default=0.1)
    e.add_argument("--tolerance-abs", type=float, default=0.0)
    e.add_argument("--csv", help="per-trial CSV path (default: eval.csv next to the checkpoint)")

    c = sub.add_parser("command", help="read 'desire horizon [morethan]' lines, "
                                       "run one trial each")
    c.add_argument("--checkpoint", help="policy checkpoint (default: run dir's final)")
    c.add_argument("--run-dir", help="run directory (provides env and checkpoint)")
    c.add_argument("--env", help="environment name when no run dir is given")
    c.add_argument("--env-params", default="{}")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--select", choices=("sample", "greedy"), default="sample")

    d = sub.add_parser("distill", help="compress successful episodes into a "
                                       "command-free policy")
    d.add_argument("--run-dir", required=True, help="run directory with episodes.jsonl")
    d.add_argument("--rule", choices=("top_quantile", "return_threshold"),
                   default="top_quantile")
    d.add_argument("--q", type=float, default=0.1)
    d.add_argument("--threshold", type=float, default=None)
    d.add_argument("--hidden-dim", type=int, default=32)
    d.add_argument("--cell", choices=("lstm", "elman"), default="lstm")
    d.add_argument("--epochs", type=int, default=1500)
    d.add_argument("--lr", type=float, default=5e-3)
    d.add_argument("--seed", type=int, default=0)

    i = sub.add_parser("inspect", help="summarize a run directory (read-only)")
    i.add_argument("--run-dir", required=True)
    i.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {
            "train": _cmd_train,
            "eval": _cmd_eval,
            "command": _cmd_command,
            "distill": _cmd_distill,
            "inspect": _cmd_inspect,
        }[args.cmd](args)
    except BrokenPipeError:
        return EXIT_OK


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _cmd_train(args) -> int:
    from .config import ConfigError, RunConfig
    from .nn import DivergenceError
    from .training import run_training

    try:
        cfg = RunConfig.load(args.config)
    except FileNotFoundError:
        return _fail(EXIT_IO, f"config file not found: {args.config}")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.parallel:
        cfg.parallel = True
    try:
        result = run_training(cfg, args.out)
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, f"training diverged: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    print(f"run directory: {result.out_dir}")
    print(f"trials: {result.trials}  best return: {result.best_return!r} "
          f"(length {result.best_length})")
    print(f"checkpoint: {result.final_checkpoint}")
    return EXIT_OK


def _load_policy_and_env(args):
    from .envs import make_env
    from .training import load_policy

    run_dir = Path(args.run_dir) if args.run_dir else None
    checkpoint = args.checkpoint
    env_name, env_params = args.env, None
    if run_dir is not None:
        resolved = run_dir / "resolved_config.json"
        if not resolved.exists():
            raise FileNotFoundError(f"{resolved} not found")
        with open(resolved, "r", encoding="utf-8") as fh:
            rc = json.load(fh)
        env_name = env_name or rc["env"]["name"]
        env_params = rc["env"].get("params", {})
        checkpoint = checkpoint or str(run_dir / "checkpoint_final.ckpt")
    if checkpoint is None:
        raise ValueError("need --checkpoint or --run-dir")
    if env_name is None:
        raise ValueError("need --env or --run-dir")
    if env_params is None:
        env_params = json.loads(args.env_params)
    policy = load_policy(checkpoint)
    env = make_env(env_name, env_params)
    s, p = env.spec, policy.env_spec
    if (s.m, s.n, s.o, s.action_kind) != (p.m, p.n, p.o, p.action_kind):
        raise ValueError(
            f"checkpoint expects (m={p.m}, n={p.n}, o={p.o}, {p.action_kind}) but "
            f"environment {env.env_id!r} provides (m={s.m}, n={s.n}, o={s.o}, "
            f"{s.action_kind})")
    return policy, env, checkpoint


def _cmd_eval(args) -> int:
    from .training import evaluate

    try:
        policy, env, checkpoint = _load_policy_and_env(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, str(exc))
    except (ValueError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    summary = evaluate(env, policy, args.desire, args.horizon_steps, args.morethan,
                       args.trials, args.seed, select=args.select,
                       tolerance_frac=args.tolerance_frac,
                       tolerance_abs=args.tolerance_abs)
    csv_path = Path(args.csv) if args.csv else Path(checkpoint).parent / "eval.csv"
    try:
        new_file = not csv_path.exists()
        with open(csv_path, "a", encoding="utf-8") as fh:
            if new_file:
                fh.write("trial,return,desire,morethan\n")
            for line in summary.row_lines(args.desire, args.morethan):
                fh.write(line + "\n")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    mode = "morethan" if args.morethan else "exact"
    print(f"command: desire={args.desire!r} horizon={args.horizon_steps} mode={mode}")
    print(f"trials: {summary.trials}")
    print(f"mean return: {summary.mean_return!r}  sigma: {summary.std_return!r}")
    print(f"satisfaction rate: {summary.satisfaction_rate!r}")
    print(f"per-trial rows appended to {csv_path}")
    return EXIT_OK


def _cmd_command(args) -> int:
    from .feedforward import CommandPolicy, run_commanded_trial
    from .recurrent import run_commanded_trial_rnn
    from .training import satisfied, trial_seed

    try:
        policy, env, _ = _load_policy_and_env(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_IO, str(exc))
    except (ValueError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    print("desire horizon [morethan] -> one trial per line; EOF exits")
    trial = 0
    for raw in sys.stdin:
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            desire = float(parts[0])
            horizon = int(parts[1])
            morethan = bool(int(parts[2])) if len(parts) > 2 else False
            if len(parts) > 3:
                raise ValueError("too many fields")
        except (IndexError, ValueError) as exc:
            print(f"error: malformed line {line!r} ({exc})")
            continue
        seed = trial_seed(args.seed, trial)
        if isinstance(policy, CommandPolicy):
            ep = run_commanded_trial(env, policy, desire, horizon, morethan, seed,
                                     select=args.select)
        else:
            ep = run_commanded_trial_rnn(env, policy, desire, horizon, morethan, seed,
                                         select=args.select)
        ret = ep.scalar_return()
        ok = satisfied(ret, desire, morethan)
        print(f"return={ret!r} steps={ep.length} satisfied={'true' if ok else 'false'}")
        trial += 1
    return EXIT_OK


def _cmd_distill(args) -> int:
    from .distill import DistillConfig, NothingToDistillError, distill, fidelity, \
        structural_audit, successful_episodes
    from .replay import ReplayBuffer

    run_dir = Path(args.run_dir)
    episodes_path = run_dir / "episodes.jsonl"
    if not episodes_path.exists():
        return _fail(EXIT_IO, f"no buffer snapshot at {episodes_path}")
    buffer = ReplayBuffer()
    try:
        buffer.load(episodes_path)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_IO, f"cannot read {episodes_path}: {exc}")
    try:
        cfg = DistillConfig(rule=args.rule, q=args.q, threshold=args.threshold,
                            hidden_dim=args.hidden_dim, cell=args.cell,
                            epochs=args.epochs, lr=args.lr, seed=args.seed)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        student = distill(buffer, cfg)
    except NothingToDistillError as exc:
        return _fail(EXIT_CONFIG, f"{exc} (success rule excluded every episode)")
    kept = successful_episodes(buffer.snapshot(), cfg)
    agreement = fidelity(student, kept)
    audit = structural_audit(student)
    ckpt = run_dir / "command_free.ckpt"
    student.save(ckpt)
    report = {
        "episodes_considered": len(buffer),
        "episodes_successful": len(kept),
        "fidelity_agreement": agreement,
        "structural_audit_command_free": audit,
        "checkpoint": str(ckpt),
    }
    with open(run_dir / "distill_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"distilled {len(kept)} of {len(buffer)} episodes")
    print(f"agreement on successful episodes: {agreement!r}")
    print(f"structural audit (no command inputs): {'pass' if audit else 'FAIL'}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK if audit else EXIT_CONFIG


def _cmd_inspect(args) -> int:
    run_dir = Path(args.run_dir)
    metrics = run_dir / "metrics.csv"
    if not run_dir.exists():
        return _fail(EXIT_IO, f"no run directory at {run_dir}")
    best = None
    rows = 0
    if metrics.exists():
        try:
            with open(metrics, "r", encoding="utf-8") as fh:
                header = fh.readline().strip().split(",")
                if "return" not in header:
                    raise ValueError("metrics.csv missing a 'return' column")
                col = header.index("return")
                for line in fh:
                    parts = line.strip().split(",")
                    if len(parts) != len(header):
                        raise ValueError(f"malformed metrics row {rows + 2}")
                    best = max(best, float(parts[col])) if best is not None \
                        else float(parts[col])
                    rows += 1
        except (OSError, ValueError) as exc:
            return _fail(EXIT_IO, f"corrupted metrics file: {exc}")
    print(f"run directory: {run_dir}")
    print(f"trials recorded: {rows}")
    print(f"best return: {best!r}" if best is not None else "best return: none")
    summary_path = run_dir / "run_summary.json"
    if summary_path.exists():
        try:
            with open(summary_path, "r", encoding="utf-8") as fh:
                summary = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            return _fail(EXIT_IO, f"corrupted run summary: {exc}")
        mix = summary.get("relabel_mix_realized", {})
        print(f"relabel mix realized: exact={mix.get('exact', 0)} "
              f"morethan={mix.get('morethan', 0)} goal={mix.get('goal', 0)}")
        print(f"stored-episode pair count: {summary.get('pair_count_total', 0)}")
    config_path = run_dir / "resolved_config.json"
    if config_path.exists():
        with open(config_path, "r", encoding="utf-8") as fh:
            print("config:")
            for line in fh.read().rstrip().splitlines():
                print(f"  {line}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
