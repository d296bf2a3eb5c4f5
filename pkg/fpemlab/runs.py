"""
Run directories: where training writes its checkpoints and metrics, and
where evaluation and inspection read them back.

    <out>/<algo>-<game>-s<seed>/
        manifest.txt          the effective config, section.key = value
        metrics.csv
        training_log.csv
        iter_0001/
            state.txt         summary of the iteration, written last
            rng.json          bit generator state after the iteration
            runner.pkl        the runner without its training memories, for evaluation
            resume.pkl        the whole runner, kept for the latest iteration only
            max/base_00.ckpt  networks in the FPEMCKPT format
            ...
"""
import csv
import json
import logging
import pickle
from dataclasses import replace
from pathlib import Path
from time import time
from typing import Dict, Iterator, List, Optional, Union

from .baselines import NfspRunner, OppoRunner, PsroRunner, Smv1Runner, Smv2Runner
from .config import RunConfig, parse_config
from .constants import (
    ITERATION_GLOB,
    MANIFEST_FILE,
    METRICS_FILE,
    RESUME_FILE,
    RNG_FILE,
    SNAPSHOT_FILE,
    STATE_FILE,
    TRAINING_LOG_FILE,
    TRAINING_LOG_HEADER,
)
from .core import RngStream
from .dqn import ReplayBuffer
from .errors import ConfigurationError, CorruptCheckpointError, MissingCheckpointError
from .evaluation import export_metrics, read_metrics
from .fpem import FpemRunner, FpemV1Runner, ReservoirMemory, Runner
from .nn import save_mlp

__all__ = [
    "RUNNERS",
    "RunDir",
    "IterationDir",
    "get_runs",
    "get_iterations",
    "make_runner",
    "train",
    "eval_stream",
]

logger = logging.getLogger(__name__)

RUNNERS = {
    "fpem": FpemRunner,
    "fpemv1": FpemV1Runner,
    "nfsp": NfspRunner,
    "smv1": Smv1Runner,
    "smv2": Smv2Runner,
    "oppo": OppoRunner,
    "psro": PsroRunner,
}
TRAIN_STREAM = 0
TRAINING_MEMORIES = (ReplayBuffer, ReservoirMemory)


class _EvaluationPickler(pickle.Pickler):
    """Pickles a runner with its replay buffers and reservoirs left out."""

    def persistent_id(self, obj):
        if isinstance(obj, TRAINING_MEMORIES):
            return type(obj).__name__
        return None


class _EvaluationUnpickler(pickle.Unpickler):
    def persistent_load(self, pid):
        return None


class IterationDir:
    path: Path
    iteration: int

    def __init__(self, path: Path):
        self.path = path
        self.iteration = int(path.name.split("_")[1])

    def __str__(self):
        return str(self.path)

    def state(self) -> Dict[str, str]:
        """The key=value summary written at the end of the iteration."""
        lines = (self.path / STATE_FILE).read_text().splitlines()
        return dict(line.split("=", 1) for line in lines if "=" in line)

    def checkpoints(self) -> List[Path]:
        return sorted(self.path.rglob("*.ckpt"))

    def load_runner(self, resume: bool = False) -> Runner:
        """
        The runner as it was after this iteration. The evaluation snapshot has no
        training memories; resume=True loads the whole runner, which only the
        latest completed iteration keeps.
        """
        name = RESUME_FILE if resume else SNAPSHOT_FILE
        snapshot = self.path / name
        if not snapshot.exists():
            raise MissingCheckpointError(self.path, [name])
        try:
            with snapshot.open("rb") as f:
                runner = (pickle.Unpickler(f) if resume else _EvaluationUnpickler(f)).load()
        except (pickle.UnpicklingError, EOFError, AttributeError, ImportError, IndexError, ValueError) as e:
            raise CorruptCheckpointError(snapshot, str(e)) from None
        if not isinstance(runner, Runner):
            raise CorruptCheckpointError(snapshot, f"holds a {type(runner).__name__}, not a runner")
        return runner


class RunDir:
    path: Path
    # Metadata
    config: RunConfig
    seed: int

    def __init__(self, path: Union[str, Path]):
        """Load a run directory from the disk."""
        self.path = Path(path)
        manifest = self.path / MANIFEST_FILE
        if not manifest.exists():
            raise MissingCheckpointError(self.path, [MANIFEST_FILE])
        self.config = parse_config(manifest.read_text())
        self.seed = self.config.seeds[0]

    def __str__(self):
        return self.path.name

    @property
    def run_id(self) -> str:
        return self.path.name

    @property
    def metrics_path(self) -> Path:
        return self.path / METRICS_FILE

    def iterations(self) -> List[IterationDir]:
        return list(get_iterations(self.path))

    def latest(self) -> IterationDir:
        iterations = self.iterations()
        if not iterations:
            raise MissingCheckpointError(self.path, [f"iter_0001/{STATE_FILE}", f"iter_0001/{SNAPSHOT_FILE}"])
        return iterations[-1]


def run_name(algo: str, game: str, seed: int) -> str:
    return f"{algo}-{game}-s{seed}"


def get_runs(out: Union[str, Path]) -> List[str]:
    """Return the names of all the runs under out."""
    # Runs are the folders holding a manifest.
    return sorted(d.name for d in Path(out).glob("*") if (d / MANIFEST_FILE).exists())


def get_iterations(run_dir: Union[str, Path]) -> Iterator[IterationDir]:
    """The completed iterations of a run, in order. An iteration is complete once its state file exists."""
    for directory in sorted(Path(run_dir).glob(ITERATION_GLOB)):
        if (directory / STATE_FILE).exists():
            yield IterationDir(directory)


def make_runner(config: RunConfig, seed: int, run_id: str = "") -> Runner:
    rng = RngStream(seed, TRAIN_STREAM).generator()
    return RUNNERS[config.algo](config.make_game(), config, rng, run_id, seed)


def save_iteration(run_dir: Path, runner: Runner) -> IterationDir:
    directory = run_dir / f"iter_{runner.iteration:04d}"
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in runner.networks().items():
        path = directory / f"{name}.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_mlp(net, path)
    with (directory / SNAPSHOT_FILE).open("wb") as f:
        _EvaluationPickler(f, protocol=pickle.HIGHEST_PROTOCOL).dump(runner)
    with (directory / RESUME_FILE).open("wb") as f:
        pickle.dump(runner, f, protocol=pickle.HIGHEST_PROTOCOL)
    (directory / RNG_FILE).write_text(json.dumps(runner.rng.bit_generator.state))
    # The state file marks the iteration complete; only then may older resume files go.
    _write_state(directory, runner)
    for other in run_dir.glob(ITERATION_GLOB):
        if other != directory:
            (other / RESUME_FILE).unlink(missing_ok=True)
    return IterationDir(directory)


def _write_state(directory: Path, runner: Runner):
    state = "".join(f"{key}={value}\n" for key, value in runner.summary().items())
    (directory / STATE_FILE).write_text(state)


def append_training_logs(run_dir: Path, runner: Runner):
    path = run_dir / TRAINING_LOG_FILE
    fresh = not path.exists()
    with path.open("a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if fresh:
            writer.writerow(TRAINING_LOG_HEADER)
        for iteration, role, log in runner.drain_logs():
            for row in log.rows:
                writer.writerow([runner.algo, iteration, role, row.episode, row.window_win_rate, row.loss, row.epsilon])


def _prepare(run_dir: Path, config: RunConfig) -> Optional[Runner]:
    """Check the manifest of an existing run and return its latest runner, if any."""
    manifest = run_dir / MANIFEST_FILE
    text = config.to_text()
    if manifest.exists():
        if parse_config(manifest.read_text()) != config:
            raise ConfigurationError("manifest", f"{run_dir} was started with another config")
    else:
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest.write_text(text)

    iterations = list(get_iterations(run_dir))
    if not iterations:
        return None
    runner = iterations[-1].load_runner(resume=True)
    # Rows written after the last completed iteration are dropped.
    if (run_dir / METRICS_FILE).exists():
        kept = [r for r in read_metrics(run_dir / METRICS_FILE) if r.iteration <= runner.iteration]
        (run_dir / METRICS_FILE).unlink()
        export_metrics(kept, run_dir / METRICS_FILE)
    log_path = run_dir / TRAINING_LOG_FILE
    if log_path.exists():
        with log_path.open(newline="") as f:
            rows = list(csv.reader(f))
        with log_path.open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(TRAINING_LOG_HEADER)
            writer.writerows(row for row in rows[1:] if int(row[1]) <= runner.iteration)
    logger.info("resuming %s after iteration %d", run_dir.name, runner.iteration)
    return runner


def train(config: RunConfig, seed: int) -> RunDir:
    """Train one seed of a config to the end, resuming from the last completed iteration."""
    config = replace(config, seeds=(seed,)).validate()
    run_dir = Path(config.out) / run_name(config.algo, config.game, seed)
    runner = _prepare(run_dir, config) or make_runner(config, seed, run_dir.name)
    if not (run_dir / METRICS_FILE).exists():
        export_metrics([], run_dir / METRICS_FILE)

    start = time()
    first_episode = runner.episodes
    while not runner.finished:
        record = runner.step(config.workers)
        export_metrics([record], run_dir / METRICS_FILE)
        append_training_logs(run_dir, runner)
        save_iteration(run_dir, runner)

    end = time()
    episodes = runner.episodes - first_episode
    logger.info(f"Run {run_dir.name} took {end - start:.1f}s at {episodes / max(end - start, 1e-9):.0f} episodes/s.")
    return RunDir(run_dir)


EVAL_STREAMS = {"nashconv": 10, "exploit": 11, "h2h": 12}


def eval_stream(run_dir: RunDir, mode: str, iteration: int) -> RngStream:
    """A stream for one evaluation job, independent of training and of the other jobs."""
    return RngStream(run_dir.seed, EVAL_STREAMS[mode], (iteration,))
