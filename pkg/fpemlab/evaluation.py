"""
Measurements: exact NashConv on Kuhn, adversary retraining, head-to-head
matches and the metrics CSV every run appends to.
"""
import csv
import hashlib
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .constants import METRICS_HEADER, PLAYER_1, PLAYER_2, POLICY_MODES
from .core import (
    BehaviorPolicy,
    Game,
    IntoRng,
    MixedPolicy,
    SeatedPolicy,
    TabularPolicy,
    as_generator,
    as_stream,
    rollout_batch,
)
from .dqn import BestResponseTrainer, QPolicy, SolverConfig
from .errors import ConfigurationError, ContractError, UnsupportedGameError
from .kuhn import nash_conv, posterior_mixture, tabulate
from .nn import Mlp
from .utils import stderr_of_mean

__all__ = [
    "MetricsRecord",
    "EvalConfig",
    "HeadToHead",
    "AdversaryResult",
    "PlateauDetector",
    "export_metrics",
    "read_metrics",
    "exact_policy",
    "nashconv_of",
    "retrain_adversary",
    "head_to_head",
    "fingerprint",
]

logger = logging.getLogger(__name__)

NASHCONV_TOLERANCE = 1e-9


@dataclass
class EvalConfig:
    # How learned policies act when measured: greedy, epsilon or stochastic.
    mode: str = "stochastic"
    # Episodes per evaluation match (win rate against the uniform random policy).
    episodes: int = 2000
    h2h_episodes: int = 20_000
    adversary_episodes: int = 50_000
    adversary_hidden: Tuple[int, ...] = (64,)
    adversary_eval_episodes: int = 10_000
    # The adversary stops early once its moving average return improved by less
    # than plateau_tolerance over plateau_patience consecutive windows.
    plateau_window: int = 10_000
    plateau_tolerance: float = 0.01
    plateau_patience: int = 3

    def validate(self, prefix="eval"):
        if self.mode not in POLICY_MODES:
            raise ConfigurationError(f"{prefix}.mode", f"must be one of {', '.join(POLICY_MODES)}")
        for name in ("episodes", "h2h_episodes", "adversary_eval_episodes", "plateau_window", "plateau_patience"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{prefix}.{name}", "must be positive")
        if self.adversary_episodes < 0:
            raise ConfigurationError(f"{prefix}.adversary_episodes", "must not be negative")
        if not self.adversary_hidden or min(self.adversary_hidden) < 1:
            raise ConfigurationError(f"{prefix}.adversary_hidden", "needs at least one positive layer width")


@dataclass
class MetricsRecord:
    """One measurement of one iteration of one run. Columns follow METRICS_HEADER."""

    run_id: str
    algo: str
    game: str
    iteration: int
    episodes: int
    nashconv: Optional[float] = None
    avg_loss: Optional[float] = None
    win_rate: Optional[float] = None
    stderr: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.nashconv is not None and self.nashconv < 0:
            raise ContractError(f"negative NashConv {self.nashconv}")
        if self.win_rate is not None and not 0 <= self.win_rate <= 1:
            raise ContractError(f"win rate {self.win_rate} outside [0, 1]")

    def to_row(self) -> List[str]:
        return ["" if value is None else str(value) for value in asdict(self).values()]

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        values = {}
        for f in fields(cls):
            text = row[f.name]
            if f.name in ("run_id", "algo", "game"):
                values[f.name] = text
            elif f.name in ("iteration", "episodes", "seed"):
                values[f.name] = int(text)
            else:
                values[f.name] = float(text) if text else None
        return cls(**values)


def export_metrics(records: Sequence[MetricsRecord], path: Union[str, Path]) -> Path:
    """Append records to a metrics CSV, writing the header if the file is new or empty."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    if not fresh:
        with path.open(newline="") as f:
            header = next(csv.reader(f), None)
        if header != METRICS_HEADER:
            raise ContractError(f"{path} has an unexpected header {header}")

    with path.open("a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if fresh:
            writer.writerow(METRICS_HEADER)
        for record in records:
            writer.writerow(record.to_row())
    return path


def read_metrics(path: Union[str, Path]) -> List[MetricsRecord]:
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRICS_HEADER:
            raise ContractError(f"{path} has an unexpected header {reader.fieldnames}")
        return [MetricsRecord.from_row(row) for row in reader]


def exact_policy(policy: BehaviorPolicy) -> BehaviorPolicy:
    """Replace the mixed strategies inside a Kuhn policy by their behavior equivalents."""
    if isinstance(policy, MixedPolicy):
        return posterior_mixture([exact_policy(p) for p in policy.policies], policy.weights, policy.name)
    if isinstance(policy, SeatedPolicy):
        return SeatedPolicy(exact_policy(policy[PLAYER_1]), exact_policy(policy[PLAYER_2]), policy.name)
    return policy


def nashconv_of(profile: BehaviorPolicy, mode: str = "stochastic", game: Optional[Game] = None) -> float:
    """
    Exact NashConv of a Kuhn profile (a policy answering for both seats) under an evaluation mode.
    FPEM models are flattened by their selector-weighted mixtures, pools by reach posteriors.
    """
    if game is not None and game.name != "kuhn":
        raise UnsupportedGameError(game.name, "exact NashConv")
    if mode not in POLICY_MODES:
        raise ContractError(f"unknown evaluation mode {mode!r}")
    table = tabulate(exact_policy(profile.evaluation_view(mode)))
    flat = TabularPolicy(table, name=f"{profile.name}-{mode}")
    value = nash_conv(flat, flat)
    if value < -NASHCONV_TOLERANCE:
        raise ContractError(f"NashConv {value} is negative beyond rounding")
    return max(value, 0.0)


@dataclass
class HeadToHead:
    """The outcome of a match, from the first model's point of view."""

    wins: int
    losses: int
    ties: int
    mean_return: float
    stderr: float

    @property
    def n_episodes(self) -> int:
        return self.wins + self.losses + self.ties

    @property
    def win_rate(self) -> float:
        return self.wins / self.n_episodes


def head_to_head(
    game: Game,
    model_a: BehaviorPolicy,
    model_b: BehaviorPolicy,
    n_episodes: int,
    rng: IntoRng,
    workers: int = 1,
) -> HeadToHead:
    """Play n_episodes, model_a taking seat 1 in the first half and seat 2 in the second."""
    if n_episodes < 1:
        raise ContractError("n_episodes must be at least 1")
    stream = as_stream(rng)
    first = (n_episodes + 1) // 2
    a_first = rollout_batch(game, model_a, model_b, first, stream.substream(0), workers, keep_trajectories=False)
    wins, losses, ties = a_first.wins, a_first.losses, a_first.ties
    total, total_sq = a_first.return_sum, a_first.return_sq_sum

    if n_episodes - first:
        b_first = rollout_batch(
            game, model_b, model_a, n_episodes - first, stream.substream(1), workers, keep_trajectories=False
        )
        wins, losses, ties = wins + b_first.losses, losses + b_first.wins, ties + b_first.ties
        total -= b_first.return_sum
        total_sq += b_first.return_sq_sum

    return HeadToHead(wins, losses, ties, total / n_episodes, stderr_of_mean(total, total_sq, n_episodes))


def _policy_bytes(value) -> Iterator[bytes]:
    if isinstance(value, Mlp):
        yield value.parameters_bytes()
    elif isinstance(value, np.ndarray):
        yield value.tobytes()
    elif isinstance(value, BehaviorPolicy):
        yield type(value).__name__.encode()
        skipped = getattr(value, "episode_state", ())
        for name, attribute in sorted(vars(value).items()):
            if name in skipped:
                continue
            yield name.encode()
            yield from _policy_bytes(attribute)
    elif isinstance(value, dict):
        for key in sorted(value, key=str):
            yield str(key).encode()
            yield from _policy_bytes(value[key])
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _policy_bytes(item)
    elif isinstance(value, (bool, int, float, str)):
        yield repr(value).encode()


def fingerprint(policy: BehaviorPolicy) -> str:
    """A hash of everything that decides how a policy acts."""
    digest = hashlib.sha256()
    for chunk in _policy_bytes(policy):
        digest.update(chunk)
    return digest.hexdigest()


class PlateauDetector:
    """Averages returns over consecutive windows and reports when they stop improving."""

    def __init__(self, window: int, tolerance: float, patience: int):
        self.window = window
        self.tolerance = tolerance
        self.patience = patience
        self.total = 0.0
        self.count = 0
        self.averages: List[float] = []
        self.stale = 0

    def update(self, episode_return: float) -> bool:
        self.total += episode_return
        self.count += 1
        if self.count < self.window:
            return False
        average = self.total / self.count
        if self.averages and average - self.averages[-1] < self.tolerance:
            self.stale += 1
        else:
            self.stale = 0
        self.averages.append(average)
        self.total, self.count = 0.0, 0
        return self.stale >= self.patience


@dataclass
class AdversaryResult:
    adversary: QPolicy
    # The frozen model's average per-episode loss (minus its return) against the adversary.
    avg_loss: float
    stderr: float
    episodes: int
    plateaued: bool


def retrain_adversary(
    frozen_model: BehaviorPolicy,
    game: Game,
    budget_episodes: int,
    rng: IntoRng,
    solver: Optional[SolverConfig] = None,
    config: Optional[EvalConfig] = None,
    workers: int = 1,
) -> AdversaryResult:
    """
    Train a DQN adversary in seat 2 against the frozen model in seat 1, then measure
    how much the frozen model loses per episode against it.
    """
    config = config or EvalConfig()
    solver = replace(
        solver or SolverConfig(),
        hidden=tuple(config.adversary_hidden),
        max_episodes=budget_episodes,
        stop_threshold=None,
    )
    rng = as_generator(rng)
    frozen = frozen_model.evaluation_view(config.mode)
    before = fingerprint(frozen_model)

    trainer = BestResponseTrainer(game, solver, rng, PLAYER_2, name="adversary")
    plateau = PlateauDetector(config.plateau_window, config.plateau_tolerance, config.plateau_patience)
    plateaued = False
    with tqdm(total=budget_episodes, desc="adversary", leave=False, disable=None) as bar:
        while not trainer.done:
            trajectory = trainer.play(frozen, rng)
            bar.update()
            if plateau.update(trajectory.episode_return[PLAYER_2 - 1]):
                plateaued = True
                break
    adversary, log = trainer.result()

    if fingerprint(frozen_model) != before:
        raise ContractError("the frozen model changed while its adversary trained")

    batch = rollout_batch(
        game,
        frozen,
        adversary.evaluation_view("greedy"),
        config.adversary_eval_episodes,
        as_stream(rng),
        workers,
        keep_trajectories=False,
    )
    logger.debug("adversary trained for %d episodes, frozen model returns %.4f", log.episodes, batch.mean_return)
    return AdversaryResult(adversary, -batch.mean_return, batch.stderr, log.episodes, plateaued)
