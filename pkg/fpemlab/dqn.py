"""
DQN best responses: replay buffer, target network, epsilon-greedy exploration.

Every learner in the lab (FPEM base policies, baselines, adversaries) is a
DqnLearner trained against an opponent drawn anew for each episode.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .constants import PLAYER_1, PLAYERS, TIE, WIN
from .core import (
    BehaviorPolicy,
    Game,
    InfoState,
    Trajectory,
    Transition,
    play_episode,
    player_transitions,
)
from .errors import ConfigurationError, ContractError, DivergenceError, NonFiniteError
from .nn import Mlp, apply_update, make_optimizer
from .utils import chrange, clamp

__all__ = [
    "SolverConfig",
    "ReplayBuffer",
    "EpsilonSchedule",
    "WindowStats",
    "StopWindow",
    "QPolicy",
    "DqnLearner",
    "LogRow",
    "TrainingLog",
    "OpponentSampler",
    "td_target",
    "stop_criterion",
    "outcome_for",
    "play_seated",
    "BestResponseTrainer",
    "dqn_train_best_response",
]

logger = logging.getLogger(__name__)

OpponentSampler = Callable[[np.random.Generator], BehaviorPolicy]


@dataclass
class SolverConfig:
    gamma: float = 0.99
    hidden: Tuple[int, ...] = (64,)
    optimizer: str = "adam"
    lr: float = 1e-3
    replay_capacity: int = 200_000
    batch_size: int = 128
    # Counted in gradient updates.
    target_sync_interval: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    # Share of max_episodes over which epsilon decays linearly.
    epsilon_fraction: float = 0.2
    # Episodes between two bursts of updates.
    learning_frequency: int = 16
    updates_per_burst: int = 8
    max_episodes: int = 50_000
    # Stop early once (wins - losses) / episodes > stop_threshold over the last
    # stop_window episodes. None trains for the full budget.
    stop_threshold: Optional[float] = None
    stop_window: int = 6000
    log_interval: int = 1000

    def validate(self, prefix="solver"):
        if not 0 <= self.gamma <= 1:
            raise ConfigurationError(f"{prefix}.gamma", "must lie in [0, 1]")
        for name in ("epsilon_start", "epsilon_end", "epsilon_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{prefix}.{name}", "must lie in [0, 1]")
        for name in (
            "replay_capacity",
            "batch_size",
            "target_sync_interval",
            "learning_frequency",
            "updates_per_burst",
            "stop_window",
            "log_interval",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{prefix}.{name}", "must be positive")
        if self.max_episodes < 0:
            raise ConfigurationError(f"{prefix}.max_episodes", "must not be negative")
        if self.stop_threshold is not None and self.stop_window > self.max_episodes:
            raise ConfigurationError(f"{prefix}.stop_window", "is longer than max_episodes")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigurationError(f"{prefix}.hidden", "needs at least one positive layer width")
        if self.lr <= 0:
            raise ConfigurationError(f"{prefix}.lr", "must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"{prefix}.optimizer", "must be adam or sgd")


class ReplayBuffer:
    """Fixed capacity ring buffer of transitions, oldest evicted first."""

    _ARRAYS = ("features", "actions", "rewards", "next_features", "next_legal", "terminal")

    def __init__(self, capacity: int, observation_dim: int, num_actions: int):
        self.capacity = capacity
        self.features = np.zeros((capacity, observation_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_features = np.zeros((capacity, observation_dim))
        self.next_legal = np.zeros((capacity, num_actions), dtype=bool)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def __repr__(self):
        return f"<ReplayBuffer({self.size}/{self.capacity})>"

    def __getstate__(self):
        # Only the filled rows are pickled; the rest is zeros.
        state = {name: getattr(self, name)[: self.size].copy() for name in self._ARRAYS}
        state.update(
            capacity=self.capacity,
            observation_dim=self.features.shape[1],
            num_actions=self.next_legal.shape[1],
            size=self.size,
            cursor=self.cursor,
        )
        return state

    def __setstate__(self, state):
        self.__init__(state["capacity"], state["observation_dim"], state["num_actions"])
        for name in self._ARRAYS:
            getattr(self, name)[: state["size"]] = state[name]
        self.size = state["size"]
        self.cursor = state["cursor"]

    def add(self, transition: Transition):
        i = self.cursor
        self.features[i] = transition.features
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_features[i] = transition.next_features
        self.next_legal[i] = transition.next_legal
        self.terminal[i] = transition.terminal
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(self.size, size=batch_size)
        return (
            self.features[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_features[idx],
            self.next_legal[idx],
            self.terminal[idx],
        )


@dataclass
class EpsilonSchedule:
    start: float
    end: float
    fraction: float
    total_episodes: int

    def __call__(self, episode: int) -> float:
        decay = self.fraction * self.total_episodes
        if decay <= 0:
            return self.end
        return chrange(clamp(episode / decay, 0.0, 1.0), (0.0, 1.0), (self.start, self.end))


def td_target(reward: float, next_q_values: Sequence[float], terminal: bool, gamma: float) -> float:
    if terminal or gamma == 0:
        return float(reward)
    return float(reward + gamma * np.max(next_q_values))


@dataclass
class WindowStats:
    wins: int
    losses: int
    episodes: int


def stop_criterion(window_stats: WindowStats, delta: float) -> bool:
    """(wins - losses) / episodes > delta. Equality keeps training."""
    if window_stats.episodes == 0:
        return False
    return (window_stats.wins - window_stats.losses) / window_stats.episodes > delta


def outcome_for(trajectory: Trajectory, player: int) -> int:
    """+1 if player won, -1 if it lost, 0 on a tie."""
    if trajectory.winner == TIE:
        return 0
    won = trajectory.winner == WIN
    return 1 if won == (player == PLAYER_1) else -1


class StopWindow:
    """The outcomes of the last `size` episodes, with running win and loss counts."""

    def __init__(self, size: int):
        self.outcomes: Deque[int] = deque(maxlen=size)
        self.wins = 0
        self.losses = 0

    def __len__(self):
        return len(self.outcomes)

    @property
    def full(self) -> bool:
        return len(self.outcomes) == self.outcomes.maxlen

    def _count(self, outcome: int, sign: int):
        if outcome > 0:
            self.wins += sign
        elif outcome < 0:
            self.losses += sign

    def record(self, outcome: int):
        if self.full:
            self._count(self.outcomes[0], -1)
        self.outcomes.append(outcome)
        self._count(outcome, 1)

    def stats(self) -> WindowStats:
        return WindowStats(self.wins, self.losses, len(self.outcomes))

    def win_rate(self) -> float:
        return self.wins / len(self.outcomes) if self.outcomes else 0.0


class QPolicy(BehaviorPolicy):
    """Epsilon-greedy over a Q-network, restricted to the legal actions."""

    def __init__(self, net: Mlp, epsilon: float = 0.0, name="q"):
        self.net = net
        self.epsilon = epsilon
        self.name = name

    def __repr__(self):
        return f"<QPolicy({self.name}, {self.net}, epsilon={self.epsilon})>"

    def q_values(self, infostate: InfoState) -> np.ndarray:
        return self.net(infostate.features)

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        mask = infostate.legal_mask
        q = np.where(mask, self.q_values(infostate), -np.inf)
        probs = self.epsilon * mask / mask.sum()
        probs[int(np.argmax(q))] += 1.0 - self.epsilon
        return probs

    def evaluation_view(self, mode: str) -> "QPolicy":
        if mode == "greedy":
            return QPolicy(self.net, 0.0, self.name)
        return self


@dataclass
class LogRow:
    episode: int
    window_win_rate: float
    loss: float
    epsilon: float


@dataclass
class TrainingLog:
    rows: List[LogRow] = field(default_factory=list)
    episodes: int = 0
    stopped_early: bool = False

    def add(self, row: LogRow):
        self.rows.append(row)


class DqnLearner:
    def __init__(
        self,
        observation_dim: int,
        num_actions: int,
        config: SolverConfig,
        rng: np.random.Generator,
        name="dqn",
    ):
        self.config = config
        self.rng = rng
        self.name = name
        self.net = Mlp([observation_dim, *config.hidden, num_actions], rng)
        self.target_net = self.net.copy()
        self.optimizer = make_optimizer(config.optimizer, config.lr)
        self.buffer = ReplayBuffer(config.replay_capacity, observation_dim, num_actions)
        self.schedule = EpsilonSchedule(
            config.epsilon_start, config.epsilon_end, config.epsilon_fraction, config.max_episodes
        )
        self.episodes = 0
        self.updates = 0
        self.last_loss = float("nan")

    def __repr__(self):
        return f"<DqnLearner({self.name}, episodes={self.episodes}, updates={self.updates})>"

    @property
    def epsilon(self) -> float:
        return self.schedule(self.episodes)

    def warm_start(self, net: Mlp):
        self.net.load_from(net)
        self.target_net.load_from(net)

    def acting_policy(self) -> QPolicy:
        """The exploring policy, sharing the live network."""
        return QPolicy(self.net, self.epsilon, self.name)

    def final_policy(self) -> QPolicy:
        """A frozen copy, acting epsilon-greedy with the final exploration rate."""
        return QPolicy(self.net.copy(), self.config.epsilon_end, self.name)

    def observe(self, transitions: Sequence[Transition]):
        for transition in transitions:
            self.buffer.add(transition)

    def end_episode(self) -> Optional[float]:
        """Count an episode; every learning_frequency episodes run a burst of updates."""
        self.episodes += 1
        if self.episodes % self.config.learning_frequency or len(self.buffer) < self.config.batch_size:
            return None
        losses = [self.update() for _ in range(self.config.updates_per_burst)]
        self.last_loss = float(np.mean(losses))
        return self.last_loss

    def update(self) -> float:
        features, actions, rewards, next_features, next_legal, terminal = self.buffer.sample(
            self.config.batch_size, self.rng
        )
        next_q = np.where(next_legal, self.target_net(next_features), -np.inf).max(axis=1)
        targets = rewards + self.config.gamma * np.where(terminal, 0.0, next_q)

        q = self.net(features)
        batch = np.arange(len(actions))
        target = q.copy()
        target[batch, actions] = targets
        mask = np.zeros_like(q)
        mask[batch, actions] = 1.0

        try:
            grads, loss = self.net.backward(features, "mse", target, mask)
            apply_update(self.net, grads, self.optimizer)
        except NonFiniteError as e:
            raise DivergenceError(f"{self.name} diverged after {self.updates} updates: {e}") from e

        self.updates += 1
        if self.updates % self.config.target_sync_interval == 0:
            self.target_net.load_from(self.net)
        return loss


def play_seated(
    game: Game, player: int, policy: BehaviorPolicy, opponent: BehaviorPolicy, rng: np.random.Generator
) -> Trajectory:
    """Play an episode with policy in seat `player` and opponent in the other seat."""
    if player == PLAYER_1:
        return play_episode(game, policy, opponent, rng)
    return play_episode(game, opponent, policy, rng)


class BestResponseTrainer:
    """
    One learner's training run, advanced an episode at a time.

    player=None draws the learner's seat anew every episode (symmetric games only).
    init_net warm-starts the Q-network, e.g. from a self-play pre-training run.
    learner continues an existing learner, replay buffer included, for another max_episodes.
    """

    def __init__(
        self,
        game: Game,
        config: SolverConfig,
        rng: np.random.Generator,
        player: Optional[int] = PLAYER_1,
        name: str = "dqn",
        init_net: Optional[Mlp] = None,
        learner: Optional[DqnLearner] = None,
    ):
        config.validate()
        if player is None and not game.symmetric:
            raise ContractError(f"{game.name} is not symmetric, the learner needs a fixed seat")
        self.game = game
        self.config = config
        self.player = player
        self.name = name
        if learner is None:
            learner = DqnLearner(game.spec.observation_dim, game.spec.actions_of(player or PLAYER_1), config, rng, name)
        self.learner = learner
        self.start = learner.episodes
        if init_net is not None:
            self.learner.warm_start(init_net)
        self.window = StopWindow(config.stop_window)
        self.log = TrainingLog()

    def __repr__(self):
        return f"<BestResponseTrainer({self.name}, {self.episodes}/{self.config.max_episodes})>"

    @property
    def episodes(self) -> int:
        return self.learner.episodes - self.start

    @property
    def done(self) -> bool:
        return self.log.stopped_early or self.episodes >= self.config.max_episodes

    def draw_seat(self, rng: np.random.Generator) -> int:
        return self.player or PLAYERS[int(rng.integers(2))]

    def acting_policy(self) -> QPolicy:
        return self.learner.acting_policy()

    def play(self, opponent: BehaviorPolicy, rng: np.random.Generator) -> Trajectory:
        """Play one training episode against opponent and learn from it."""
        seat = self.draw_seat(rng)
        trajectory = play_seated(self.game, seat, self.acting_policy(), opponent, rng)
        self.record(trajectory, seat)
        return trajectory

    def record(self, trajectory: Trajectory, seat: int):
        """Learn from an episode this learner played as its own."""
        self.learner.observe(player_transitions(trajectory, seat))
        self.learner.end_episode()
        self.window.record(outcome_for(trajectory, seat))

        episode = self.episodes
        if episode % self.config.log_interval == 0:
            self.log.add(LogRow(episode, self.window.win_rate(), self.learner.last_loss, self.learner.epsilon))
        if self.config.stop_threshold is not None and self.window.full:
            if stop_criterion(self.window.stats(), self.config.stop_threshold):
                self.log.stopped_early = True
                logger.debug("%s stopped after %d episodes", self.name, episode)

    def observe(self, trajectory: Trajectory, seat: int):
        """Keep the transitions of an episode played by someone else in this seat (off-policy data)."""
        self.learner.observe(player_transitions(trajectory, seat))

    def result(self) -> Tuple[QPolicy, TrainingLog]:
        self.log.episodes = self.episodes
        return self.learner.final_policy(), self.log


def dqn_train_best_response(
    game: Game,
    opponent_sampler: OpponentSampler,
    config: SolverConfig,
    rng: np.random.Generator,
    player: Optional[int] = PLAYER_1,
    on_episode: Optional[Callable[[Trajectory, BehaviorPolicy], None]] = None,
    name: str = "dqn",
    init_net: Optional[Mlp] = None,
) -> Tuple[QPolicy, TrainingLog]:
    """
    Train a best response for `player` against opponents drawn per episode.
    Stops at the episode cap or, if configured, when the win window clears the threshold.
    """
    trainer = BestResponseTrainer(game, config, rng, player, name, init_net)
    with tqdm(total=config.max_episodes, desc=name, leave=False, disable=None) as bar:
        while not trainer.done:
            opponent = opponent_sampler(rng)
            trajectory = trainer.play(opponent, rng)
            if on_episode is not None:
                on_episode(trajectory, opponent)
            bar.update()
    return trainer.result()
