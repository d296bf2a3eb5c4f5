"""
The algorithms FPEM is compared with.

  NFSP    fictitious self-play with a best response net and a supervised average net
  SMv1    one policy per player, retrained in turn against the other
  SMv2    SMv1 where the min player is replaced by an opponent pool
  OPPO    both players train fresh policies against the other's pool
  PSRO    an empirical meta-game solved by regret matching (Kuhn only)
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .constants import PLAYER_1, PLAYER_2
from .core import (
    BehaviorPolicy,
    Game,
    InfoState,
    MixedPolicy,
    RngStream,
    SeatedPolicy,
    UniformPolicy,
    play_episode,
    player_transitions,
    rollout_batch,
)
from .dqn import BestResponseTrainer, DqnLearner, QPolicy
from .errors import ConfigurationError, UnsupportedGameError
from .fpem import MAX, MIN, OpponentPool, ReservoirMemory, Runner
from .kuhn import expected_value
from .nn import Mlp, apply_update, make_optimizer, masked_softmax

__all__ = [
    "NfspConfig",
    "PsroConfig",
    "AveragePolicy",
    "NfspAgent",
    "NfspRunner",
    "Smv1Runner",
    "Smv2Runner",
    "OppoRunner",
    "PsroRunner",
    "EmpiricalMetaGame",
    "regret_matching",
    "solve_meta_game",
    "nfsp_run",
    "smv1_run",
    "smv2_run",
    "oppo_run",
    "psro_lite_run",
]

logger = logging.getLogger(__name__)

META_STREAM = 2


@dataclass
class NfspConfig:
    # Anticipatory parameter: probability of playing a whole episode with the best response net.
    eta: float = 0.1
    average_hidden: Tuple[int, ...] = (64,)
    average_lr: float = 1e-3
    reservoir_capacity: int = 200_000
    average_batch: int = 128
    # Average-net updates per burst, on the same cadence as the best response net.
    average_updates_per_burst: int = 8

    def validate(self, prefix="nfsp"):
        if not 0 <= self.eta <= 1:
            raise ConfigurationError(f"{prefix}.eta", "must lie in [0, 1]")
        for name in ("reservoir_capacity", "average_batch", "average_updates_per_burst"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{prefix}.{name}", "must be positive")
        if not self.average_hidden or min(self.average_hidden) < 1:
            raise ConfigurationError(f"{prefix}.average_hidden", "needs at least one positive layer width")
        if self.average_lr <= 0:
            raise ConfigurationError(f"{prefix}.average_lr", "must be positive")


@dataclass
class PsroConfig:
    sims_per_entry: int = 10_000
    # Fill the meta-game with exact expected values instead of simulations.
    exact_entries: bool = False
    rm_iterations: int = 10_000

    def validate(self, prefix="psro"):
        for name in ("sims_per_entry", "rm_iterations"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{prefix}.{name}", "must be positive")


class AveragePolicy(BehaviorPolicy):
    """A softmax policy net, masked to the legal actions."""

    def __init__(self, net: Mlp, name="average", greedy: bool = False):
        self.net = net
        self.name = name
        self.greedy = greedy

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        probs = masked_softmax(self.net(infostate.features), infostate.legal_mask)
        if self.greedy:
            return np.eye(len(probs))[int(np.argmax(probs))]
        return probs

    def evaluation_view(self, mode: str) -> "AveragePolicy":
        return AveragePolicy(self.net, self.name, greedy=mode == "greedy")


class _NfspActing(BehaviorPolicy):
    """What an NFSP agent plays during one episode; best response actions are remembered."""

    def __init__(self, agent: "NfspAgent", use_best_response: bool):
        self.agent = agent
        self.use_best_response = use_best_response
        self.behavior = agent.learner.acting_policy() if use_best_response else agent.average_policy()
        self.name = agent.name

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        return self.behavior.act_distribution(infostate)

    def act(self, infostate: InfoState, rng: np.random.Generator) -> int:
        action = self.behavior.act(infostate, rng)
        if self.use_best_response:
            self.agent.memory.insert((infostate.features, action))
        return action


class NfspAgent:
    def __init__(self, game: Game, player: int, solver, config: NfspConfig, rng: np.random.Generator, name="nfsp"):
        self.config = config
        self.rng = rng
        self.name = name
        num_actions = game.spec.actions_of(player)
        self.learner = DqnLearner(game.spec.observation_dim, num_actions, solver, rng, f"{name}-br")
        self.average = Mlp([game.spec.observation_dim, *config.average_hidden, num_actions], rng)
        self.optimizer = make_optimizer("adam", config.average_lr)
        self.memory = ReservoirMemory(config.reservoir_capacity, rng)
        self.average_loss = float("nan")

    def __repr__(self):
        return f"<NfspAgent({self.name}, {self.learner}, {self.memory})>"

    def average_policy(self) -> AveragePolicy:
        return AveragePolicy(self.average, self.name)

    def begin_episode(self, rng: np.random.Generator) -> BehaviorPolicy:
        return _NfspActing(self, rng.random() < self.config.eta)

    def end_episode(self, trajectory, seat: int):
        self.learner.observe(player_transitions(trajectory, seat))
        self.learner.end_episode()
        if self.learner.episodes % self.learner.config.learning_frequency == 0:
            self.train_average()

    def train_average(self):
        if len(self.memory) < self.config.average_batch:
            return
        losses = []
        for _ in range(self.config.average_updates_per_burst):
            idx = self.rng.integers(len(self.memory), size=self.config.average_batch)
            features = np.stack([self.memory.items[i][0] for i in idx])
            actions = np.array([self.memory.items[i][1] for i in idx])
            grads, loss = self.average.backward(features, "softmax_xent", actions)
            apply_update(self.average, grads, self.optimizer)
            losses.append(loss)
        self.average_loss = float(np.mean(losses))


class NfspRunner(Runner):
    """Two NFSP agents in self-play; an iteration is one solver budget of episodes."""

    algo = "nfsp"

    def __init__(self, game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0):
        super().__init__(game, config, rng, run_id, seed)
        self.agents = {
            PLAYER_1: NfspAgent(game, PLAYER_1, config.solver, config.nfsp, rng, "nfsp-1"),
            PLAYER_2: NfspAgent(game, PLAYER_2, config.solver, config.nfsp, rng, "nfsp-2"),
        }

    def _iterate(self, t: int):
        n = self.config.solver.max_episodes
        for _ in tqdm(range(n), desc=f"nfsp-{t}", leave=False, disable=None):
            # Agents swap seats at random in symmetric games.
            first, second = PLAYER_1, PLAYER_2
            if self.game.symmetric and self.rng.random() < 0.5:
                first, second = second, first
            trajectory = play_episode(
                self.game,
                self.agents[first].begin_episode(self.rng),
                self.agents[second].begin_episode(self.rng),
                self.rng,
            )
            self.agents[first].end_episode(trajectory, PLAYER_1)
            self.agents[second].end_episode(trajectory, PLAYER_2)
        self.episodes += n

    def profile(self) -> BehaviorPolicy:
        return SeatedPolicy(self.agents[PLAYER_1].average_policy(), self.agents[PLAYER_2].average_policy(), self.algo)

    def champion(self) -> BehaviorPolicy:
        if self.game.symmetric:
            return self.agents[PLAYER_1].average_policy()
        return self.profile()

    def networks(self) -> Dict[str, Mlp]:
        nets = {}
        for player, agent in self.agents.items():
            nets[f"p{player}/average"] = agent.average
            nets[f"p{player}/q"] = agent.learner.net
        return nets


class Smv1Runner(Runner):
    """One policy model per player, each retrained in turn against the other's latest."""

    algo = "smv1"

    def __init__(self, game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0):
        super().__init__(game, config, rng, run_id, seed)
        spec = game.spec
        self.learners = {
            role: DqnLearner(spec.observation_dim, spec.actions_of(seat or PLAYER_1), config.solver, rng, role)
            for role, seat in zip((MAX, MIN), self.seats)
        }
        self.policies: Dict[str, QPolicy] = {role: learner.final_policy() for role, learner in self.learners.items()}

    def _continue(self, role: str, seat: Optional[int], opponent: BehaviorPolicy, t: int):
        trainer = BestResponseTrainer(
            self.game, self.config.solver, self.rng, seat, f"{role}-{t}", learner=self.learners[role]
        )
        while not trainer.done:
            trainer.play(opponent, self.rng)
        policy, log = trainer.result()
        self.episodes += log.episodes
        self.training_logs.append((t, role, log))
        self.policies[role] = policy

    def _iterate(self, t: int):
        max_seat, min_seat = self.seats
        self._continue(MAX, max_seat, self.policies[MIN], t)
        self._continue(MIN, min_seat, self.policies[MAX], t)

    def profile(self) -> BehaviorPolicy:
        return SeatedPolicy(self.policies[MAX], self.policies[MIN], self.algo)

    def champion(self) -> BehaviorPolicy:
        return self.policies[MAX] if self.game.symmetric else self.profile()

    def networks(self) -> Dict[str, Mlp]:
        return {f"{role}/model": policy.net for role, policy in self.policies.items()}


class Smv2Runner(Smv1Runner):
    """A single max model against a pool of min policies, at most T of them."""

    algo = "smv2"

    def __init__(self, game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0):
        super().__init__(game, config, rng, run_id, seed)
        del self.learners[MIN]
        del self.policies[MIN]
        self.pool = OpponentPool(capacity=config.iterations)

    def _iterate(self, t: int):
        max_seat, min_seat = self.seats
        trainer = BestResponseTrainer(
            self.game, self.config.solver, self.rng, max_seat, f"{MAX}-{t}", learner=self.learners[MAX]
        )
        while not trainer.done:
            trainer.play(self.pool.sample(self.rng), self.rng)
        policy, log = trainer.result()
        self.episodes += log.episodes
        self.training_logs.append((t, MAX, log))
        self.policies[MAX] = policy

        champion = self.policies[MAX]
        self.pool.add(self._train(min_seat, lambda rng: champion, MIN))

    def profile(self) -> BehaviorPolicy:
        return SeatedPolicy(self.policies[MAX], self.pool.as_policy(), self.algo)

    def networks(self) -> Dict[str, Mlp]:
        nets = {f"{MAX}/model": self.policies[MAX].net}
        for j, policy in enumerate(self.pool.policies):
            nets[f"pool/opponent_{j:02d}"] = policy.net
        return nets


class OppoRunner(Runner):
    """Both players keep a pool; each new policy trains against the other pool, one draw per game."""

    algo = "oppo"

    def __init__(self, game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0):
        super().__init__(game, config, rng, run_id, seed)
        self.pools = {MAX: OpponentPool(), MIN: OpponentPool()}

    def _iterate(self, t: int):
        max_seat, min_seat = self.seats
        self.pools[MAX].add(self._train(max_seat, self.pools[MIN].sample, MAX))
        self.pools[MIN].add(self._train(min_seat, self.pools[MAX].sample, MIN))

    def profile(self) -> BehaviorPolicy:
        return SeatedPolicy(self.pools[MAX].as_policy(), self.pools[MIN].as_policy(), self.algo)

    def champion(self) -> BehaviorPolicy:
        return self.pools[MAX].as_policy() if self.game.symmetric else self.profile()

    def networks(self) -> Dict[str, Mlp]:
        return {
            f"{role}/policy_{j:02d}": policy.net
            for role, pool in self.pools.items()
            for j, policy in enumerate(pool.policies)
        }

    def summary(self) -> Dict[str, object]:
        summary = super().summary()
        summary["pool_size"] = f"{len(self.pools[MAX])}/{len(self.pools[MIN])}"
        return summary


def regret_matching(cumulative_regret: Sequence[float]) -> np.ndarray:
    """Play in proportion to positive regret; uniform when no regret is positive."""
    positive = np.maximum(np.asarray(cumulative_regret, dtype=np.float64), 0.0)
    total = positive.sum()
    if total <= 0:
        return np.full(len(positive), 1.0 / len(positive))
    return positive / total


def solve_meta_game(payoffs: np.ndarray, iterations: int = 10_000) -> Tuple[np.ndarray, np.ndarray]:
    """
    Regret matching self-play on a zero-sum matrix game (row player maximizes).
    The averaged strategies are returned.
    """
    payoffs = np.asarray(payoffs, dtype=np.float64)
    rows, cols = payoffs.shape
    regret_row, regret_col = np.zeros(rows), np.zeros(cols)
    sum_row, sum_col = np.zeros(rows), np.zeros(cols)
    for _ in range(iterations):
        sigma_row = regret_matching(regret_row)
        sigma_col = regret_matching(regret_col)
        sum_row += sigma_row
        sum_col += sigma_col
        row_values = payoffs @ sigma_col
        col_values = -(sigma_row @ payoffs)
        regret_row += row_values - sigma_row @ row_values
        regret_col += col_values - sigma_col @ col_values
    return sum_row / iterations, sum_col / iterations


class EmpiricalMetaGame:
    """Player 1's expected payoff for every pair of policies in the two pools."""

    def __init__(self):
        self.payoffs = np.zeros((0, 0))
        self.counts = np.zeros((0, 0), dtype=np.int64)

    def __repr__(self):
        return f"<EmpiricalMetaGame({self.payoffs.shape[0]}x{self.payoffs.shape[1]})>"

    def extend(
        self,
        rows: Sequence[BehaviorPolicy],
        cols: Sequence[BehaviorPolicy],
        estimate: Callable[[int, int], Tuple[float, int]],
    ):
        """Grow to the pool sizes, estimating only the entries not computed yet."""
        old_rows, old_cols = self.payoffs.shape
        payoffs = np.zeros((len(rows), len(cols)))
        counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
        payoffs[:old_rows, :old_cols] = self.payoffs
        counts[:old_rows, :old_cols] = self.counts
        for i in range(len(rows)):
            for j in range(len(cols)):
                if i >= old_rows or j >= old_cols:
                    payoffs[i, j], counts[i, j] = estimate(i, j)
        self.payoffs, self.counts = payoffs, counts


class PsroRunner(Runner):
    """Policy-space response oracles on Kuhn: both pools start with the uniform random policy."""

    algo = "psro"

    def __init__(self, game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0):
        if game.name != "kuhn":
            raise UnsupportedGameError(game.name, "psro")
        super().__init__(game, config, rng, run_id, seed)
        self.pools: Dict[str, List[BehaviorPolicy]] = {MAX: [UniformPolicy()], MIN: [UniformPolicy()]}
        self.meta_game = EmpiricalMetaGame()
        self.meta_strategies = {MAX: np.ones(1), MIN: np.ones(1)}
        self._solve()

    def _entry(self, i: int, j: int) -> Tuple[float, int]:
        row, col = self.pools[MAX][i], self.pools[MIN][j]
        if self.config.psro.exact_entries:
            return expected_value(row, col), 0
        n = self.config.psro.sims_per_entry
        stream = RngStream(self.seed, META_STREAM, (i, j))
        batch = rollout_batch(self.game, row, col, n, stream, keep_trajectories=False)
        return batch.mean_return, n

    def _solve(self):
        self.meta_game.extend(self.pools[MAX], self.pools[MIN], self._entry)
        sigma_row, sigma_col = solve_meta_game(self.meta_game.payoffs, self.config.psro.rm_iterations)
        self.meta_strategies = {MAX: sigma_row, MIN: sigma_col}

    def meta_policy(self, role: str) -> MixedPolicy:
        return MixedPolicy(self.pools[role], self.meta_strategies[role], name=f"psro-{role}")

    def _iterate(self, t: int):
        max_seat, min_seat = self.seats
        row_mix, col_mix = self.meta_policy(MAX), self.meta_policy(MIN)
        row_oracle = self._train(max_seat, lambda rng: col_mix, MAX)
        col_oracle = self._train(min_seat, lambda rng: row_mix, MIN)
        self.pools[MAX].append(row_oracle)
        self.pools[MIN].append(col_oracle)
        self._solve()
        logger.debug("meta-strategies %s / %s", self.meta_strategies[MAX], self.meta_strategies[MIN])

    def profile(self) -> BehaviorPolicy:
        return SeatedPolicy(self.meta_policy(MAX), self.meta_policy(MIN), self.algo)

    def networks(self) -> Dict[str, Mlp]:
        return {
            f"{role}/oracle_{j:02d}": policy.net
            for role, pool in self.pools.items()
            for j, policy in enumerate(pool)
            if isinstance(policy, QPolicy)
        }

    def summary(self) -> Dict[str, object]:
        summary = super().summary()
        summary["pool_size"] = f"{len(self.pools[MAX])}/{len(self.pools[MIN])}"
        summary["meta_strategy"] = " ".join(f"{p:.3f}" for p in self.meta_strategies[MAX])
        return summary


def _run(runner_class, game, config, rng, run_id, seed) -> Runner:
    runner = runner_class(game, config, rng, run_id, seed)
    runner.run()
    return runner


def nfsp_run(game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0) -> NfspRunner:
    return _run(NfspRunner, game, config, rng, run_id, seed)


def smv1_run(game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0) -> Smv1Runner:
    return _run(Smv1Runner, game, config, rng, run_id, seed)


def smv2_run(game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0) -> Smv2Runner:
    return _run(Smv2Runner, game, config, rng, run_id, seed)


def oppo_run(game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0) -> OppoRunner:
    return _run(OppoRunner, game, config, rng, run_id, seed)


def psro_lite_run(game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0) -> PsroRunner:
    return _run(PsroRunner, game, config, rng, run_id, seed)
