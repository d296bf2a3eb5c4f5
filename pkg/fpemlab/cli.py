"""
Command line interface.

    python -m fpemlab train --algo fpem --game kuhn --seed 7
    python -m fpemlab eval runs/fpem-kuhn-s7 --mode nashconv
    python -m fpemlab eval runs/fpem-treasure-s0 --mode h2h --against runs/oppo-treasure-s0
    python -m fpemlab inspect runs/fpem-kuhn-s7/iter_0010

Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
anything that fails while running.
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

from rich.console import Console
from rich.table import Table

from .config import RunConfig, load_config, parse_config, parse_overrides
from .constants import (
    ALGORITHMS,
    EVAL_MODES,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    GAMES,
    MANIFEST_FILE,
    POLICY_MODES,
    STATE_FILE,
)
from .errors import ConfigurationError, FpemError, MissingCheckpointError, UnsupportedGameError
from .evaluation import MetricsRecord, export_metrics, head_to_head, nashconv_of, retrain_adversary
from .nn import load_mlp
from .runs import IterationDir, RunDir, eval_stream, train
from .utils import setup_logging

__all__ = ["main", "build_parser", "cmd_train", "cmd_eval", "cmd_inspect"]

logger = logging.getLogger(__name__)
console = Console()

# Flag -> config key, applied after the config file.
FLAG_KEYS = {
    "algo": "run.algo",
    "game": "run.game",
    "seed": "run.seeds",
    "workers": "run.workers",
    "out": "run.out",
    "iterations": "run.iterations",
    "episodes_per_iter": "solver.max_episodes",
    "eval_episodes": "eval.episodes",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=None, help="overrides $FPEM_LOG_LEVEL (default INFO)")

    parser = argparse.ArgumentParser(prog="fpemlab", description="Fictitious play with expanding models.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", parents=[common], help="train a run, resuming it if its directory exists")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--game", choices=GAMES)
    p.add_argument("--config", type=Path, help="a section.key = value file")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    p.add_argument("--episodes-per-iter", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval", parents=[common], help="measure every iteration of a run")
    p.add_argument("run", type=Path)
    p.add_argument("--mode", choices=EVAL_MODES, default="nashconv")
    p.add_argument("--against", type=Path, help="second run directory, for h2h")
    p.add_argument("--policy-mode", choices=POLICY_MODES, help="how learned policies act when measured")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--eval-episodes", type=int, help="episodes per match or adversary evaluation")
    p.add_argument("--budget", type=int, help="adversary training episodes")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser(
        "inspect", parents=[common], help="summarize a checkpoint file, iteration or run directory"
    )
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_inspect)
    return parser


def _overrides(args) -> Dict[str, str]:
    overrides = {}
    for name, key in FLAG_KEYS.items():
        value = getattr(args, name, None)
        if value is not None:
            overrides[key] = str(value)
    overrides.update(parse_overrides(args.set))
    return overrides


def resolve_config(args) -> RunConfig:
    overrides = _overrides(args)
    if args.config is not None:
        if not args.config.exists():
            raise ConfigurationError("--config", f"{args.config} does not exist")
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def cmd_train(args) -> int:
    config = resolve_config(args)
    for seed in config.seeds:
        run = train(config, seed)
        logger.info("metrics written to %s", run.metrics_path)
    return EXIT_OK


def _print_records(records: List[MetricsRecord]):
    table = Table("run", "iteration", "episodes", "nashconv", "avg_loss", "win_rate", "stderr")
    for r in records:
        table.add_row(
            r.run_id,
            str(r.iteration),
            str(r.episodes),
            *("" if v is None else f"{v:.4f}" for v in (r.nashconv, r.avg_loss, r.win_rate, r.stderr)),
        )
    console.print(table)


def cmd_eval(args) -> int:
    run = RunDir(args.run)
    config = run.config
    mode = args.policy_mode or config.eval.mode
    iterations = run.iterations()
    if not iterations:
        raise MissingCheckpointError(run.path, [f"iter_0001/{STATE_FILE}"])
    records = []

    if args.mode == "nashconv":
        if config.game != "kuhn":
            raise UnsupportedGameError(config.game, "exact NashConv")
        for iteration in iterations:
            runner = iteration.load_runner()
            value = nashconv_of(runner.profile(), mode, runner.game)
            records.append(
                MetricsRecord(
                    run.run_id, runner.algo, config.game, runner.iteration, runner.episodes, value, seed=run.seed
                )
            )

    elif args.mode == "exploit":
        eval_config = config.eval
        if args.eval_episodes is not None:
            eval_config = replace(eval_config, adversary_eval_episodes=args.eval_episodes)
        eval_config = replace(eval_config, mode=mode)
        budget = config.eval.adversary_episodes if args.budget is None else args.budget
        for iteration in iterations:
            runner = iteration.load_runner()
            result = retrain_adversary(
                runner.champion(),
                runner.game,
                budget,
                eval_stream(run, "exploit", runner.iteration),
                solver=config.solver,
                config=eval_config,
                workers=args.workers,
            )
            records.append(
                MetricsRecord(
                    run.run_id,
                    runner.algo,
                    config.game,
                    runner.iteration,
                    runner.episodes,
                    avg_loss=result.avg_loss,
                    stderr=result.stderr,
                    seed=run.seed,
                )
            )

    else:
        if args.against is None:
            raise ConfigurationError("--against", "h2h needs a second run directory")
        other = RunDir(args.against)
        if other.config.game != config.game:
            raise ConfigurationError(
                "--against", f"{run} plays {config.game} but {other} plays {other.config.game}"
            )
        runner = iterations[-1].load_runner()
        opponent = other.latest().load_runner()
        n = args.eval_episodes or config.eval.h2h_episodes
        match = head_to_head(
            runner.game,
            runner.champion().evaluation_view(mode),
            opponent.champion().evaluation_view(mode),
            n,
            eval_stream(run, "h2h", runner.iteration),
            args.workers,
        )
        logger.info("%s vs %s: %d wins, %d losses, %d ties", run, other, match.wins, match.losses, match.ties)
        records.append(
            MetricsRecord(
                f"{run.run_id}:vs:{other.run_id}",
                f"{runner.algo}-vs-{opponent.algo}",
                config.game,
                runner.iteration,
                runner.episodes,
                win_rate=match.win_rate,
                stderr=match.stderr,
                seed=run.seed,
            )
        )

    export_metrics(records, run.metrics_path)
    _print_records(records)
    return EXIT_OK


def _inspect_iteration(iteration: IterationDir, table: Table):
    for key, value in iteration.state().items():
        table.add_row(key, value)
    for path in iteration.checkpoints():
        net = load_mlp(path)
        table.add_row(str(path.relative_to(iteration.path)), " x ".join(map(str, net.sizes)))


def cmd_inspect(args) -> int:
    """Read-only summary of a checkpoint file, an iteration directory or a run directory."""
    path: Path = args.path
    table = Table("field", "value", title=str(path))

    if path.is_file():
        net = load_mlp(path)
        table.add_row("layers", " x ".join(map(str, net.sizes)))
        table.add_row("parameters", str(sum(p.size for p in net.parameters)))
    elif (path / STATE_FILE).exists():
        _inspect_iteration(IterationDir(path), table)
    elif path.is_dir():
        run = RunDir(path)
        iteration = run.latest()
        table.add_row("run", run.run_id)
        table.add_row("completed iterations", str(len(run.iterations())))
        _inspect_iteration(iteration, table)
    else:
        raise MissingCheckpointError(path, ["a .ckpt file", STATE_FILE, MANIFEST_FILE])

    console.print(table)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigurationError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except FpemError as e:
        logger.error(str(e))
        return EXIT_RUNTIME
