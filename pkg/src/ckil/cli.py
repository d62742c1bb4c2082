"""Command line: ``ckil generate | train | eval | sweep | probe``.

Settings resolve as command-line flags, then the ``--config`` file, then
built-in defaults. Kernel and training settings left unset fall back to the
per-environment preset.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .artifacts import load_checkpoint, save_checkpoint, start_time, write_csv, write_json, write_manifest
from .demos import generate_dataset, load_dataset, save_dataset
from .density import ACTION_MODES, KernelConfig, save_cache
from .envs import ENV_IDS, GridSpec, env_spec
from .errors import CKILError, ConfigError, InputError
from .evaluation import (
    DEFAULT_EPISODES,
    BandwidthRule,
    ExpertPolicy,
    LearnedPolicy,
    RandomPolicy,
    SyntheticMDP,
    consistency_probe,
    evaluate,
)
from .experiments import PRESETS, build_buffer, build_cache, preset, sweep
from .train import TrainConfig, train_bc, train_ckil

KERNEL_FLAGS = {"h1": "h1", "h2": "h2", "h3": "h3", "action_dist": "action_distance"}
TRAIN_FLAGS = {"lam": "lam", "lr": "learning_rate", "batch": "batch_size", "iters": "max_iters",
               "patience": "patience", "width": "width"}


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # preset-driven options have no single default, their help says so
    def _get_help_string(self, action):
        if action.default is None or action.default is argparse.SUPPRESS:
            return action.help
        return super()._get_help_string(action)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _presets_epilog() -> str:
    lines = ["per-environment presets (used for unset kernel/training options):"]
    for env_id, p in PRESETS.items():
        k, t = p.kernel, p.train
        grid = f"{p.grid_cells}x{p.grid_cells} grid" if p.grid_cells else "continuous"
        lines.append(
            f"  {env_id}: {grid}, h=({k.h1}, {k.h2}, {k.h3}), actions={k.action_distance}, lambda={t.lam}, lr={t.learning_rate}, "
            f"batch={t.batch_size}, iters={t.max_iters}, patience={t.patience}, width={t.width}, "
            f"ladder={','.join(map(str, p.ladder))}"
        )
    return "\n".join(lines)


class _Formatter(_HelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _add_common(p):
    p.add_argument("--config", help="flat 'key = value' file; keys are option names without dashes")
    p.add_argument("--seed", type=int, default=0, help="master seed")


def _add_model_options(p):
    g = p.add_argument_group("kernel (CKIL only)")
    g.add_argument("--h1", type=float, help="bandwidth of the (s', a') kernel")
    g.add_argument("--h2", type=float, help="bandwidth of the (s, a) kernel")
    g.add_argument("--h3", type=float, help="bandwidth of the s' kernel")
    g.add_argument("--action-dist", choices=ACTION_MODES, help="how actions enter the kernel distances")
    g.add_argument("--grid", type=int,
                   help="cells per state dimension for the counting estimator; 0 selects the kernel estimator")
    g = p.add_argument_group("training")
    g.add_argument("--lambda", dest="lam", type=float, help="entropy regularization weight")
    g.add_argument("--lr", type=float, help="Adam learning rate")
    g.add_argument("--batch", type=int, help="minibatch size (sampled with replacement)")
    g.add_argument("--iters", type=int, help="maximum optimizer steps")
    g.add_argument("--patience", type=int, help="plateau length that stops training early")
    g.add_argument("--width", type=int, help="hidden units per layer")


def build_parser():
    parser = argparse.ArgumentParser(prog="ckil", description=__doc__.splitlines()[0], formatter_class=_Formatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs = {}

    p = sub.add_parser("generate", help="write expert demonstrations", formatter_class=_Formatter)
    _add_common(p)
    p.add_argument("--env", required=True, choices=ENV_IDS, help="environment")
    p.add_argument("--expert", help="scripted expert (defaults to the environment's own)")
    p.add_argument("--n-traj", type=int, default=1000, help="number of episodes")
    p.add_argument("--epsilon", type=float, default=0.0, help="probability of a uniformly random action")
    p.add_argument("--out", required=True, help="dataset path (.jsonl)")
    subs["generate"] = p

    p = sub.add_parser("train", help="fit a policy to a dataset", formatter_class=_Formatter,
                       epilog=_presets_epilog())
    _add_common(p)
    p.add_argument("--env", required=True, choices=ENV_IDS, help="environment")
    p.add_argument("--data", required=True, help="dataset path (.jsonl)")
    p.add_argument("--algo", choices=("ckil", "bc"), default="ckil", help="training objective")
    p.add_argument("--out", required=True, help="output directory")
    _add_model_options(p)
    subs["train"] = p

    p = sub.add_parser("eval", help="roll out a checkpoint or a reference policy", formatter_class=_Formatter)
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint written by 'train'")
    p.add_argument("--policy", choices=("expert", "random"), help="evaluate a reference policy instead")
    p.add_argument("--env", choices=ENV_IDS, help="required with --policy; must match the checkpoint otherwise")
    p.add_argument("--episodes", type=int, default=DEFAULT_EPISODES, help="evaluation episodes per policy")
    p.add_argument("--mode", choices=("sampled", "argmax", "both"), default="both",
                   help="action selection during rollouts")
    p.add_argument("--out", required=True, help="output directory")
    subs["eval"] = p

    p = sub.add_parser("sweep", help="sample-complexity sweep of CKIL against BC", formatter_class=_Formatter,
                       epilog=_presets_epilog())
    _add_common(p)
    p.add_argument("--env", required=True, choices=ENV_IDS, help="environment")
    p.add_argument("--data", help="trajectory pool (.jsonl); generated from the expert when omitted")
    p.add_argument("--pool-size", type=int, default=1000, help="episodes in a generated pool")
    p.add_argument("--epsilon", type=float, default=0.0, help="expert randomization for a generated pool")
    p.add_argument("--counts", type=_int_list, help="trajectory counts, comma separated (preset ladder if unset)")
    p.add_argument("--repeats", type=int, default=10, help="random draws per trajectory count")
    p.add_argument("--episodes", type=int, default=DEFAULT_EPISODES, help="evaluation episodes per policy")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, help="output directory")
    _add_model_options(p)
    subs["sweep"] = p

    p = sub.add_parser("probe", help="estimator consistency on a synthetic MDP", formatter_class=_Formatter)
    _add_common(p)
    p.add_argument("--n", type=_int_list, default="100,1000,10000", help="buffer sizes, strictly increasing")
    p.add_argument("--scale", type=float, default=BandwidthRule.scale, help="bandwidth h(n) = scale * n^-exponent")
    p.add_argument("--exponent", type=float, default=BandwidthRule.exponent, help="bandwidth decay rate")
    p.add_argument("--noise-sd", type=float, default=SyntheticMDP.noise_sd, help="transition noise")
    p.add_argument("--state-sd", type=float, default=SyntheticMDP.state_sd, help="spread of sampled states")
    p.add_argument("--replicates", type=int, default=4, help="buffers averaged per n")
    p.add_argument("--out", required=True, help="output directory")
    subs["probe"] = p
    return parser, subs


def read_config(path, subparser) -> dict:
    """Flat ``key = value`` file -> string defaults for ``subparser``."""
    options = {}
    for action in subparser._actions:
        for flag in action.option_strings:
            if flag.startswith("--"):
                options[flag[2:].replace("-", "_")] = action.dest
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc.strerror}") from None
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise InputError(f"malformed config file {path}: {exc}") from None
    values = {}
    for key, value in parser["run"].items():
        name = key.replace("-", "_")
        if name not in options or name in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r} in {path}")
        values[options[name]] = value
    return values


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = subs[args.command]
        sub.set_defaults(**read_config(args.config, sub))
        args = parser.parse_args(argv)
    return args


# --- config resolution ---------------------------------------------------------


def _kernel(args, p) -> KernelConfig:
    values = {field: getattr(args, flag) for flag, field in KERNEL_FLAGS.items() if getattr(args, flag) is not None}
    return KernelConfig(**{**p.kernel.to_dict(), **values})


def _train(args, p) -> TrainConfig:
    values = {field: getattr(args, flag) for flag, field in TRAIN_FLAGS.items() if getattr(args, flag) is not None}
    return TrainConfig(**{**p.train.to_dict(), **values, "seed": args.seed})


def _grid(args, p) -> GridSpec | None:
    cells = p.grid_cells if args.grid is None else args.grid
    if cells is None or cells == 0:
        return None
    if cells < 0:
        raise ConfigError("--grid must be non-negative")
    return GridSpec.for_env(env_spec(p.env_id), cells)


def _load_data(path, env_id):
    try:
        data = load_dataset(path)
    except OSError as exc:
        raise InputError(f"cannot read dataset {path}: {exc.strerror}") from None
    spec = env_spec(env_id)
    for traj in data:
        if traj.states.shape[1] != spec.state_dim:
            raise InputError(f"episode {traj.episode_id} has {traj.states.shape[1]}-dimensional states; "
                             f"{env_id} needs {spec.state_dim}")
        if traj.actions.max() >= spec.action_count:
            raise InputError(f"episode {traj.episode_id} uses an action outside 0..{spec.action_count - 1}")
    return data


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ------------------------------------------------------------------


def cmd_generate(args):
    started = start_time()
    if args.n_traj < 1:
        raise ConfigError("--n-traj must be at least 1")
    if not 0.0 <= args.epsilon <= 1.0:
        raise ConfigError("--epsilon must lie in [0, 1]")
    expert = args.expert or args.env
    data = generate_dataset(args.env, expert, args.n_traj, args.seed, args.epsilon)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out)
    config = {"env": args.env, "expert": expert, "n_traj": args.n_traj, "seed": args.seed, "epsilon": args.epsilon}
    write_manifest(out.parent, "generate", config, {}, [out], started)
    print(f"wrote {len(data)} episodes ({sum(len(t) for t in data)} steps) to {out}")


def cmd_train(args):
    started = start_time()
    p = preset(args.env)
    kernel, train, grid = _kernel(args, p), _train(args, p), _grid(args, p)
    data = _load_data(args.data, args.env)
    out = _out_dir(args.out)
    count = env_spec(args.env).action_count
    buffer = build_buffer(data, grid)
    outputs = []
    if args.algo == "ckil":
        cache = build_cache(buffer, args.env, kernel, grid)
        outputs.append(out / "density_cache.csv")
        save_cache(cache, outputs[-1])
        params, hist = train_ckil(buffer, cache, train, action_count=count)
    else:
        params, hist = train_bc(buffer, train, action_count=count)
    policy = LearnedPolicy(params, buffer.standardizer, grid)
    kernel_dict = kernel.to_dict() if args.algo == "ckil" else None
    outputs.append(save_checkpoint(out / "checkpoint.json", algorithm=args.algo, env_id=args.env, policy=policy,
                                   kernel=kernel_dict, train=train.to_dict(), history=hist.to_dict()))
    rows = [
        {"iteration": i, "total": t, "balance": b, "entropy": e, "smoothed": s, "best": m}
        for i, (t, b, e, s, m) in enumerate(zip(hist.total, hist.balance, hist.entropy, hist.smoothed, hist.best))
    ]
    outputs.append(write_csv(out / "loss_history.csv", rows,
                             ["iteration", "total", "balance", "entropy", "smoothed", "best"]))
    config = {"env": args.env, "algo": args.algo, "kernel": kernel_dict, "train": train.to_dict(),
              "grid": None if grid is None else list(grid.cells_per_dim)}
    write_manifest(out, "train", config, {"data": args.data}, outputs, started)
    print(f"{args.algo}: {len(buffer)} tuples, {len(hist.total)} iterations, "
          f"best smoothed loss {hist.best[-1]!r} at iteration {hist.best_iter}")


def cmd_eval(args):
    started = start_time()
    if (args.checkpoint is None) == (args.policy is None):
        raise ConfigError("give exactly one of --checkpoint and --policy")
    if args.episodes < 1:
        raise ConfigError("--episodes must be at least 1")
    inputs = {}
    if args.checkpoint:
        env_id, algo, policy, _ = load_checkpoint(args.checkpoint)
        if args.env and args.env != env_id:
            raise ConfigError(f"checkpoint was trained on {env_id}, not {args.env}")
        name = algo or "checkpoint"
        inputs["checkpoint"] = args.checkpoint
    else:
        if not args.env:
            raise ConfigError("--policy needs --env")
        env_id, name = args.env, args.policy
        policy = ExpertPolicy(env_id) if args.policy == "expert" else RandomPolicy(env_spec(env_id).action_count)
    modes = ("sampled", "argmax") if args.mode == "both" else (args.mode,)
    out = _out_dir(args.out)
    reports = {mode: evaluate(env_id, policy, args.episodes, args.seed, mode) for mode in modes}
    rows = [
        {"mode": mode, "episode": i, "seed": args.seed + i, "return": ret}
        for mode, rep in reports.items() for i, ret in enumerate(rep.returns)
    ]
    outputs = [
        write_json(out / "eval.json", {"env": env_id, "policy": name, "base_seed": args.seed,
                                       "reports": {m: r.to_dict() for m, r in reports.items()}}),
        write_csv(out / "eval.csv", rows, ["mode", "episode", "seed", "return"]),
    ]
    config = {"env": env_id, "policy": name, "episodes": args.episodes, "seed": args.seed, "modes": list(modes)}
    write_manifest(out, "eval", config, inputs, outputs, started)
    for mode, rep in reports.items():
        print(f"{env_id} {name} [{mode}]: mean {rep.mean_return:.2f} std {rep.std_return:.2f} "
              f"over {rep.n_episodes} episodes")


SWEEP_COLUMNS = ["traj_count", "repeat", "algorithm", "mode", "mean_return", "std_return"]
SUMMARY_COLUMNS = ["traj_count", "algorithm", "mode", "repeats", "mean", "median", "std", "stderr"]


def cmd_sweep(args):
    started = start_time()
    p = preset(args.env)
    kernel, train, grid = _kernel(args, p), _train(args, p), _grid(args, p)
    counts = args.counts or list(p.ladder)
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    inputs = {}
    if args.data:
        pool = _load_data(args.data, args.env)
        inputs["pool"] = args.data
    else:
        if args.pool_size < 1:
            raise ConfigError("--pool-size must be at least 1")
        pool = generate_dataset(args.env, args.env, args.pool_size, args.seed, args.epsilon)
    out = _out_dir(args.out)
    report = sweep(args.env, pool, counts, args.repeats, kernel, train, grid, args.episodes, args.seed,
                   workers=args.threads)
    summary = report.summary()
    config = {"env": args.env, "counts": counts, "repeats": args.repeats, "episodes": args.episodes,
              "seed": args.seed, "kernel": kernel.to_dict(), "train": train.to_dict(),
              "grid": None if grid is None else list(grid.cells_per_dim),
              "pool": args.data or {"size": args.pool_size, "epsilon": args.epsilon}}
    outputs = [
        write_csv(out / "sweep_rows.csv", report.rows, SWEEP_COLUMNS),
        write_csv(out / "sweep_summary.csv", summary, SUMMARY_COLUMNS),
        write_json(out / "sweep.json", {"config": config, "rows": report.rows, "summary": summary}),
    ]
    write_manifest(out, "sweep", config, inputs, outputs, started)
    for row in summary:
        if row["mode"] == "sampled":
            print(f"{row['traj_count']:>4} {row['algorithm']:<6} mean {row['mean']:9.2f}  std {row['std']:7.2f}")


def cmd_probe(args):
    started = start_time()
    if args.replicates < 1:
        raise ConfigError("--replicates must be at least 1")
    if not (args.scale > 0 and args.exponent > 0 and args.state_sd > 0):
        raise ConfigError("--scale, --exponent and --state-sd must be positive")
    mdp = SyntheticMDP(noise_sd=args.noise_sd, state_sd=args.state_sd)
    rule = BandwidthRule(args.scale, args.exponent)
    report = consistency_probe(mdp, args.n, rule, args.seed, args.replicates)
    out = _out_dir(args.out)
    config = {"n": list(args.n), "scale": args.scale, "exponent": args.exponent, "noise_sd": args.noise_sd,
              "state_sd": args.state_sd, "shifts": list(mdp.shifts), "replicates": args.replicates,
              "seed": args.seed}
    outputs = [
        write_csv(out / "probe.csv", report.rows, ["n", "bandwidth", "mean_abs_error"]),
        write_json(out / "probe.json", {"config": config, "rows": report.rows}),
    ]
    write_manifest(out, "probe", config, {}, outputs, started)
    for row in report.rows:
        print(f"n={row['n']:>7}  h={row['bandwidth']:.5f}  mean abs error {row['mean_abs_error']:.6f}")


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "probe": cmd_probe}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args)
    except CKILError as exc:
        print(f"ckil: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0) if not isinstance(exc.code, str) else 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
