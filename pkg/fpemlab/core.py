"""
The two-player zero-sum game abstraction everything else builds on.

A game hands out states; a state tells which players act, what each of them
sees (an InfoState) and applies joint actions, returning a reward pair that
always sums to zero. Turn-based games (Kuhn) have one acting player per
tick, simultaneous games (treasure hunting) have two.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import LOSS, PLAYER_1, PLAYER_2, TIE, WIN
from .errors import ContractError, CoverageError, PolicyFaultError
from .utils import stderr_of_mean

__all__ = [
    "GameSpec",
    "InfoState",
    "BehaviorPolicy",
    "UniformPolicy",
    "TabularPolicy",
    "SeatedPolicy",
    "MixedPolicy",
    "Game",
    "GameState",
    "Step",
    "Trajectory",
    "Transition",
    "RngStream",
    "BatchResult",
    "IntoRng",
    "as_generator",
    "as_stream",
    "check_distribution",
    "sample_index",
    "winner_of",
    "play_episode",
    "rollout_batch",
    "player_transitions",
]

DISTRIBUTION_TOLERANCE = 1e-9
ROLLOUT_CHUNK = 500


@dataclass(frozen=True)
class GameSpec:
    num_actions: Tuple[int, int]
    max_episode_length: int
    observation_dim: int
    zero_sum: bool = True

    def __post_init__(self):
        if len(self.num_actions) != 2 or min(self.num_actions) < 2:
            raise ContractError(f"each player needs at least 2 actions, got {self.num_actions}")
        if self.max_episode_length < 1:
            raise ContractError("max_episode_length must be at least 1")
        if not self.zero_sum:
            raise ContractError("only zero-sum games are supported")

    def actions_of(self, player: int) -> int:
        return self.num_actions[player - 1]


@dataclass(frozen=True, eq=False)
class InfoState:
    """What the acting player knows at a decision point."""

    key: str
    features: np.ndarray
    legal_actions: Tuple[int, ...]
    acting_player: int
    num_actions: int

    def __repr__(self):
        return f"<InfoState({self.key!r}, player={self.acting_player}, legal={self.legal_actions})>"

    @property
    def legal_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_actions, dtype=bool)
        mask[list(self.legal_actions)] = True
        return mask


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream: the same (seed, stream_id, spawn_key) always draws the same numbers."""

    seed: int
    stream_id: int = 0
    spawn_key: Tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,) + self.spawn_key)
        return np.random.Generator(np.random.PCG64(sequence))

    def substream(self, index: int) -> "RngStream":
        return replace(self, spawn_key=self.spawn_key + (index,))


IntoRng = Union[RngStream, np.random.Generator, int]


def as_generator(rng: IntoRng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()


def as_stream(rng: IntoRng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, np.random.Generator):
        return RngStream(int(rng.integers(2**63)))
    return RngStream(int(rng))


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a distribution. Zero-mass entries are never drawn."""
    cumulative = np.cumsum(probs)
    u = rng.random() * cumulative[-1]
    return min(int(np.searchsorted(cumulative, u, side="right")), len(probs) - 1)


def check_distribution(probs, infostate: InfoState) -> np.ndarray:
    """Return probs as an array, or raise a PolicyFaultError naming the acting player."""
    player = infostate.acting_player
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (infostate.num_actions,):
        raise PolicyFaultError(
            player, f"expected {infostate.num_actions} probabilities, got shape {probs.shape}"
        )
    if not np.all(np.isfinite(probs)):
        raise PolicyFaultError(player, f"non-finite probabilities {probs} at {infostate.key!r}")
    if np.any(probs < 0):
        raise PolicyFaultError(player, f"negative probabilities {probs} at {infostate.key!r}")
    if abs(probs.sum() - 1.0) > DISTRIBUTION_TOLERANCE:
        raise PolicyFaultError(player, f"probabilities sum to {probs.sum()!r} at {infostate.key!r}")
    if np.any(probs[~infostate.legal_mask] > 0):
        raise PolicyFaultError(player, f"mass on illegal actions at {infostate.key!r}")
    return probs


class BehaviorPolicy:
    """Maps an information state to a distribution over the actions."""

    name = "policy"

    def __repr__(self):
        return f"<{self.__class__.__name__}({self.name})>"

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        raise NotImplementedError

    def act(self, infostate: InfoState, rng: np.random.Generator) -> int:
        probs = check_distribution(self.act_distribution(infostate), infostate)
        return sample_index(probs, rng)

    def evaluation_view(self, mode: str) -> "BehaviorPolicy":
        """The policy to evaluate under mode greedy/epsilon/stochastic. Most policies have only one."""
        return self

    def begin_episode(self, rng: np.random.Generator):
        """Called once before every episode the policy plays."""


class UniformPolicy(BehaviorPolicy):
    name = "uniform"

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        mask = infostate.legal_mask
        return mask / mask.sum()


class TabularPolicy(BehaviorPolicy):
    """A policy stored as a table from infostate keys to distributions."""

    def __init__(self, table: Dict[str, Sequence[float]], name="tabular"):
        self.table = {key: np.asarray(probs, dtype=np.float64) for key, probs in table.items()}
        self.name = name

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        try:
            return self.table[infostate.key]
        except KeyError:
            raise CoverageError(infostate.key) from None


class SeatedPolicy(BehaviorPolicy):
    """A full profile: one policy per seat, chosen by the acting player."""

    def __init__(self, policy_1: BehaviorPolicy, policy_2: BehaviorPolicy, name="seated"):
        self.policies = {PLAYER_1: policy_1, PLAYER_2: policy_2}
        self.name = name

    def __getitem__(self, player: int) -> BehaviorPolicy:
        return self.policies[player]

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        return self.policies[infostate.acting_player].act_distribution(infostate)

    def act(self, infostate: InfoState, rng: np.random.Generator) -> int:
        return self.policies[infostate.acting_player].act(infostate, rng)

    def evaluation_view(self, mode: str) -> "SeatedPolicy":
        return SeatedPolicy(
            self.policies[PLAYER_1].evaluation_view(mode),
            self.policies[PLAYER_2].evaluation_view(mode),
            self.name,
        )

    def begin_episode(self, rng: np.random.Generator):
        self.policies[PLAYER_1].begin_episode(rng)
        if self.policies[PLAYER_2] is not self.policies[PLAYER_1]:
            self.policies[PLAYER_2].begin_episode(rng)


class MixedPolicy(BehaviorPolicy):
    """A mixed strategy: one member is drawn before each episode and plays all of it."""

    # Set by begin_episode, not part of the strategy.
    episode_state = ("current",)

    def __init__(
        self, policies: Sequence[BehaviorPolicy], weights: Optional[Sequence[float]] = None, name="mixed"
    ):
        if not policies:
            raise ContractError("a mixed policy needs at least one member")
        self.policies = list(policies)
        if weights is None:
            weights = np.full(len(self.policies), 1.0 / len(self.policies))
        self.weights = np.asarray(weights, dtype=np.float64)
        self.name = name
        self.current = self.policies[0]

    def __repr__(self):
        return f"<MixedPolicy({self.name}, {len(self.policies)} members)>"

    def begin_episode(self, rng: np.random.Generator):
        self.current = self.policies[sample_index(self.weights, rng)]
        self.current.begin_episode(rng)

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        return self.current.act_distribution(infostate)

    def act(self, infostate: InfoState, rng: np.random.Generator) -> int:
        return self.current.act(infostate, rng)

    def evaluation_view(self, mode: str) -> "MixedPolicy":
        return MixedPolicy([p.evaluation_view(mode) for p in self.policies], self.weights, self.name)


class GameState:
    tick: int = 0

    def is_terminal(self) -> bool:
        raise NotImplementedError

    def acting_players(self) -> Tuple[int, ...]:
        raise NotImplementedError

    def infostate(self, player: int) -> InfoState:
        raise NotImplementedError

    def apply_actions(self, actions: Dict[int, int]) -> Tuple[float, float]:
        """Apply the actions of the acting players and return the reward pair of the tick."""
        raise NotImplementedError


class Game:
    name = "game"
    symmetric = False
    spec: GameSpec

    def new_initial_state(self, rng: np.random.Generator) -> GameState:
        raise NotImplementedError


@dataclass
class Step:
    infostates: Dict[int, InfoState]
    actions: Dict[int, int]
    rewards: Tuple[float, float]
    terminal: bool


@dataclass
class Trajectory:
    steps: List[Step] = field(default_factory=list)
    episode_return: Tuple[float, float] = (0.0, 0.0)
    winner: str = TIE

    def __len__(self):
        return len(self.steps)


@dataclass
class Transition:
    features: np.ndarray
    action: int
    reward: float
    next_features: np.ndarray
    next_legal: np.ndarray
    terminal: bool


def winner_of(episode_return: Tuple[float, float]) -> str:
    """The higher return wins; equal returns (both 0 in a zero-sum game) tie."""
    if episode_return[0] > episode_return[1]:
        return WIN
    if episode_return[0] < episode_return[1]:
        return LOSS
    return TIE


def play_episode(
    game: Game,
    policy_1: BehaviorPolicy,
    policy_2: BehaviorPolicy,
    rng: IntoRng,
) -> Trajectory:
    """Play one full episode. Passing the same RngStream twice replays the same episode."""
    rng = as_generator(rng)
    policies = {PLAYER_1: policy_1, PLAYER_2: policy_2}
    policy_1.begin_episode(rng)
    if policy_2 is not policy_1:
        policy_2.begin_episode(rng)
    state = game.new_initial_state(rng)
    trajectory = Trajectory()
    total = [0.0, 0.0]

    while not state.is_terminal():
        if len(trajectory.steps) >= game.spec.max_episode_length:
            raise ContractError(f"{game.name} exceeded {game.spec.max_episode_length} steps")

        infostates = {p: state.infostate(p) for p in state.acting_players()}
        actions = {}
        for player, infostate in infostates.items():
            try:
                actions[player] = policies[player].act(infostate, rng)
            except PolicyFaultError as e:
                # Composite policies report the seat they were built for, not the one they play.
                raise PolicyFaultError(player, e.reason) from e

        rewards = state.apply_actions(actions)
        if rewards[0] + rewards[1] != 0:
            raise ContractError(f"{game.name} emitted non zero-sum rewards {rewards}")
        total[0] += rewards[0]
        total[1] += rewards[1]
        trajectory.steps.append(Step(infostates, actions, rewards, state.is_terminal()))

    trajectory.episode_return = (total[0], total[1])
    trajectory.winner = winner_of(trajectory.episode_return)
    return trajectory


@dataclass
class BatchResult:
    trajectories: List[Trajectory]
    wins: int
    losses: int
    ties: int
    mean_return: float
    stderr: float
    return_sum: float = 0.0
    return_sq_sum: float = 0.0

    @property
    def n_episodes(self):
        return self.wins + self.losses + self.ties

    @property
    def win_rate(self):
        return self.wins / self.n_episodes


def _play_chunk(args) -> Tuple[List[Trajectory], Tuple[int, int, int], float, float]:
    game, policy_1, policy_2, n, stream, keep = args
    rng = stream.generator()
    trajectories = []
    counts = {WIN: 0, LOSS: 0, TIE: 0}
    total = total_sq = 0.0
    for _ in range(n):
        trajectory = play_episode(game, policy_1, policy_2, rng)
        counts[trajectory.winner] += 1
        ret = trajectory.episode_return[0]
        total += ret
        total_sq += ret * ret
        if keep:
            trajectories.append(trajectory)
    return trajectories, (counts[WIN], counts[LOSS], counts[TIE]), total, total_sq


def rollout_batch(
    game: Game,
    policy_1: BehaviorPolicy,
    policy_2: BehaviorPolicy,
    n_episodes: int,
    rng: IntoRng,
    workers: int = 1,
    keep_trajectories: bool = True,
) -> BatchResult:
    """
    Play n_episodes and aggregate them from player 1's point of view.

    Episodes are split in fixed chunks, each with its own substream, so the
    result does not depend on the number of workers.
    """
    if n_episodes < 1:
        raise ContractError("n_episodes must be at least 1")

    stream = as_stream(rng)
    chunks = []
    for i, start in enumerate(range(0, n_episodes, ROLLOUT_CHUNK)):
        n = min(ROLLOUT_CHUNK, n_episodes - start)
        chunks.append((game, policy_1, policy_2, n, stream.substream(i), keep_trajectories))

    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_play_chunk, chunks))
    else:
        results = [_play_chunk(chunk) for chunk in chunks]

    trajectories = []
    wins = losses = ties = 0
    total = total_sq = 0.0
    for chunk_trajectories, (w, l, t), s, sq in results:
        trajectories.extend(chunk_trajectories)
        wins, losses, ties = wins + w, losses + l, ties + t
        total += s
        total_sq += sq

    return BatchResult(
        trajectories,
        wins,
        losses,
        ties,
        total / n_episodes,
        stderr_of_mean(total, total_sq, n_episodes),
        total,
        total_sq,
    )


def player_transitions(trajectory: Trajectory, player: int) -> List[Transition]:
    """
    The trajectory as seen by one player: from each of its decisions to the next one,
    with the rewards received in between. Rewards before its first decision are dropped.
    """
    transitions = []
    pending: Optional[Tuple[InfoState, int]] = None
    reward = 0.0
    index = player - 1

    for step in trajectory.steps:
        if player in step.infostates:
            infostate = step.infostates[player]
            if pending is not None:
                previous, action = pending
                transitions.append(
                    Transition(
                        previous.features, action, reward, infostate.features, infostate.legal_mask, False
                    )
                )
            pending = (infostate, step.actions[player])
            reward = 0.0
        reward += step.rewards[index]

    if pending is not None:
        previous, action = pending
        transitions.append(
            Transition(
                previous.features,
                action,
                reward,
                np.zeros_like(previous.features),
                np.ones(previous.num_actions, dtype=bool),
                True,
            )
        )
    return transitions
