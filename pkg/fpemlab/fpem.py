"""
Fictitious play with expanding models.

The max player keeps a growing set of frozen base policies and a selector
network W that picks, at every information state, which of them acts.
Each iteration trains one new base policy against the opponent pool, then
trains the min player against the current mixture while recording which base
policy acted where. Those (infostate, index) pairs teach W to reproduce the
uniform mixture over the base policies as a single behavior policy.

This module also holds the pieces the baselines reuse: the reservoir memory,
the opponent pool and the Runner all algorithms are driven by.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import PLAYER_1, PLAYER_2, PLAYERS
from .core import (
    BehaviorPolicy,
    Game,
    InfoState,
    MixedPolicy,
    RngStream,
    SeatedPolicy,
    UniformPolicy,
    check_distribution,
    play_episode,
    player_transitions,
    sample_index,
)
from .dqn import BestResponseTrainer, DqnLearner, QPolicy, TrainingLog, dqn_train_best_response, play_seated
from .errors import ConfigurationError, ContractError, DimensionError, DivergenceError, NonFiniteError
from .evaluation import MetricsRecord, head_to_head, nashconv_of
from .nn import Mlp, Optimizer, apply_update, make_optimizer, softmax

__all__ = [
    "MAX",
    "MIN",
    "LABEL_MODES",
    "FpemConfig",
    "BasePolicySet",
    "SelectorModel",
    "ReservoirMemory",
    "OpponentPool",
    "FpemModel",
    "LabeledPolicy",
    "ExpandingSide",
    "Runner",
    "FpemRunner",
    "FpemV1Runner",
    "reservoir_insert",
    "fpem_act",
    "sample_training_opponent",
    "train_selector",
    "selector_loss",
    "run_fpem",
    "run_fpem_v1",
]

logger = logging.getLogger(__name__)

MAX = "max"
MIN = "min"
LABEL_MODES = ("executed", "episode")
EVAL_STREAM = 1


@dataclass
class FpemConfig:
    reservoir_capacity: int = 100_000
    selector_hidden: Tuple[int, ...] = (64,)
    selector_lr: float = 1e-3
    selector_optimizer: str = "adam"
    # Passes over the reservoir every time W retrains.
    selector_epochs: int = 5
    selector_batch: int = 128
    # Share of the reservoir held out to measure the selector loss.
    holdout_fraction: float = 0.1
    # episode: one uniformly drawn index labels a whole episode, so the selector
    # learns the reach posterior of the uniform mixture.
    # executed: the label is the index W' picked at h.
    label_mode: str = "episode"
    # Both players keep base policies and a selector, instead of the min player keeping a pool.
    both_expand: bool = False
    # Episodes the min side spends collecting its own labels (both_expand, alternating only).
    label_episodes: int = 10_000
    # Self-play pre-training, as a fraction of one iteration's episode budget.
    pretrain_fraction: float = 0.0

    def validate(self, prefix="fpem"):
        for name in ("reservoir_capacity", "selector_epochs", "selector_batch"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{prefix}.{name}", "must be positive")
        if self.label_episodes < 0:
            raise ConfigurationError(f"{prefix}.label_episodes", "must not be negative")
        if not self.selector_hidden or min(self.selector_hidden) < 1:
            raise ConfigurationError(f"{prefix}.selector_hidden", "needs at least one positive layer width")
        if self.selector_lr <= 0:
            raise ConfigurationError(f"{prefix}.selector_lr", "must be positive")
        if self.selector_optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"{prefix}.selector_optimizer", "must be adam or sgd")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigurationError(f"{prefix}.holdout_fraction", "must lie in [0, 1)")
        if not 0 <= self.pretrain_fraction <= 1:
            raise ConfigurationError(f"{prefix}.pretrain_fraction", "must lie in [0, 1]")
        if self.label_mode not in LABEL_MODES:
            raise ConfigurationError(f"{prefix}.label_mode", f"must be one of {', '.join(LABEL_MODES)}")


class BasePolicySet:
    """Frozen base policies, in the order they were trained. Never more than `capacity`."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._policies: List[BehaviorPolicy] = []

    def __repr__(self):
        return f"<BasePolicySet({len(self)}/{self.capacity})>"

    def __len__(self):
        return len(self._policies)

    def __iter__(self):
        return iter(self._policies)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return list(self._policies[index])
        return self._policies[index]

    def add(self, policy: BehaviorPolicy):
        if len(self) >= self.capacity:
            raise ContractError(f"the base policy set is full ({self.capacity} policies)")
        self._policies.append(policy)


class SelectorModel:
    """
    The selector W and its target W'. W grows one output per base policy;
    W' only changes through sync_target.
    """

    def __init__(self, observation_dim: int, hidden: Sequence[int], rng: np.random.Generator):
        self.observation_dim = observation_dim
        self.hidden = tuple(hidden)
        self.rng = rng
        self.net: Optional[Mlp] = None
        self.target: Optional[Mlp] = None

    def __repr__(self):
        return f"<SelectorModel(size={self.size}, target={self.target_size})>"

    @property
    def size(self) -> int:
        return 0 if self.net is None else self.net.output_dim

    @property
    def target_size(self) -> int:
        return 0 if self.target is None else self.target.output_dim

    def grow(self):
        """One more base policy. Outputs start with zero weights, so W starts uniform."""
        if self.net is None:
            self.net = Mlp([self.observation_dim, *self.hidden, 1], self.rng)
            w, b = self.net.layers[-1]
            self.net.layers[-1] = (np.zeros_like(w), b)
        else:
            self.net.grow_output(1)

    def sync_target(self):
        self.target = self.net.copy()

    def distribution(self, features: np.ndarray, target: bool = False) -> np.ndarray:
        net = self.target if target else self.net
        if net is None:
            raise ContractError("the selector has no base policy to choose from")
        return softmax(net(features))


class ReservoirMemory:
    """A uniform sample of at most `capacity` of all the items ever inserted."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.items: list = []
        self.seen = 0

    def __repr__(self):
        return f"<ReservoirMemory({len(self.items)}/{self.capacity}, seen={self.seen})>"

    def __len__(self):
        return len(self.items)

    def insert(self, item, rng: Optional[np.random.Generator] = None):
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
            return
        victim = int((rng or self.rng).integers(self.seen))
        if victim < self.capacity:
            self.items[victim] = item

    def record(self, infostate: InfoState, index: int):
        """Store that base policy `index` acted at infostate."""
        self.insert((infostate.features, infostate.key, index))


def reservoir_insert(memory: ReservoirMemory, item, rng: np.random.Generator) -> ReservoirMemory:
    memory.insert(item, rng)
    return memory


class OpponentPool:
    """Frozen opponents, sampled uniformly. A capacity drops the oldest first."""

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity
        self.policies: List[BehaviorPolicy] = []

    def __repr__(self):
        return f"<OpponentPool({len(self.policies)})>"

    def __len__(self):
        return len(self.policies)

    def add(self, policy: BehaviorPolicy):
        self.policies.append(policy)
        if self.capacity is not None and len(self.policies) > self.capacity:
            self.policies.pop(0)

    def sample(self, rng: np.random.Generator) -> BehaviorPolicy:
        """A uniformly drawn member, or the uniform random policy while the pool is empty."""
        if not self.policies:
            return UniformPolicy()
        return self.policies[int(rng.integers(len(self.policies)))]

    def as_policy(self, name="pool") -> BehaviorPolicy:
        if not self.policies:
            return UniformPolicy()
        return MixedPolicy(self.policies, name=name)


class FpemModel(BehaviorPolicy):
    """
    Base policies plus a selector: at each information state a base policy index
    is drawn from the selector, then that policy acts.
    """

    def __init__(self, policies: Sequence[BehaviorPolicy], selector: Mlp, name="fpem", recorder=None):
        if not policies:
            raise ContractError("an FPEM model needs at least one base policy")
        if selector.output_dim != len(policies):
            raise DimensionError(f"selector over {selector.output_dim} policies for {len(policies)} base policies")
        self.policies = list(policies)
        self.selector = selector
        self.name = name
        self.recorder = recorder

    def __repr__(self):
        return f"<FpemModel({self.name}, {len(self.policies)} base policies)>"

    def selection(self, infostate: InfoState) -> np.ndarray:
        return softmax(self.selector(infostate.features))

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        weights = self.selection(infostate)
        return sum(
            w * check_distribution(policy.act_distribution(infostate), infostate)
            for w, policy in zip(weights, self.policies)
        )

    def act(self, infostate: InfoState, rng: np.random.Generator) -> int:
        j = sample_index(self.selection(infostate), rng)
        if self.recorder is not None:
            self.recorder.record(infostate, j)
        return self.policies[j].act(infostate, rng)

    def evaluation_view(self, mode: str) -> "FpemModel":
        # Selection stays stochastic in every mode.
        return FpemModel([p.evaluation_view(mode) for p in self.policies], self.selector, self.name)


def fpem_act(model: FpemModel, infostate: InfoState, rng: np.random.Generator) -> int:
    return model.act(infostate, rng)


class LabeledPolicy(BehaviorPolicy):
    """A base policy playing a whole episode under a fixed index, recorded at every decision."""

    def __init__(self, policy: BehaviorPolicy, index: int, recorder: ReservoirMemory):
        self.policy = policy
        self.index = index
        self.recorder = recorder
        self.name = f"{policy.name}#{index}"

    def act_distribution(self, infostate: InfoState) -> np.ndarray:
        return self.policy.act_distribution(infostate)

    def act(self, infostate: InfoState, rng: np.random.Generator) -> int:
        self.recorder.record(infostate, self.index)
        return self.policy.act(infostate, rng)


def sample_training_opponent(
    role: str,
    t: int,
    pool: Optional[OpponentPool],
    mixture: Optional[BehaviorPolicy],
    current: Optional[BehaviorPolicy],
    rng: np.random.Generator,
) -> BehaviorPolicy:
    """
    The opponent for one training episode at iteration t. The max player faces a
    uniform draw from the pool; the min player faces the newest base policy with
    probability 1/t, otherwise the frozen mixture over the older ones.
    """
    if t < 1:
        raise ContractError(f"iterations start at 1, got {t}")
    if role == MAX:
        return pool.sample(rng) if pool is not None else UniformPolicy()
    if role != MIN:
        raise ContractError(f"unknown role {role!r}")
    if mixture is None or rng.random() < 1.0 / t:
        return current
    return mixture


def _stack(items) -> Tuple[np.ndarray, np.ndarray]:
    features = np.stack([item[0] for item in items])
    labels = np.array([item[-1] for item in items], dtype=np.int64)
    return features, labels


def selector_loss(selector_net: Mlp, items) -> float:
    """Mean cross-entropy of the selector on (features, key, index) items."""
    features, labels = _stack(items)
    logits = selector_net(features)
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(labels)), labels].mean())


def train_selector(
    selector_net: Mlp,
    memory: Union[ReservoirMemory, Sequence],
    optimizer: Optimizer,
    epochs: int,
    rng: np.random.Generator,
    batch_size: int = 128,
) -> float:
    """Fit W to the stored (infostate, index) pairs by cross-entropy and return the final loss."""
    items = memory.items if isinstance(memory, ReservoirMemory) else list(memory)
    if not items:
        raise ContractError("the selector memory is empty")
    features, labels = _stack(items)
    if labels.min() < 0 or labels.max() >= selector_net.output_dim:
        raise ContractError(
            f"selector labels span [{labels.min()}, {labels.max()}]"
            f" but there are {selector_net.output_dim} base policies"
        )

    for _ in range(epochs):
        order = rng.permutation(len(labels))
        for start in range(0, len(labels), batch_size):
            batch = order[start : start + batch_size]
            grads, _ = selector_net.backward(features[batch], "softmax_xent", labels[batch])
            apply_update(selector_net, grads, optimizer)
    return selector_loss(selector_net, items)


class ExpandingSide:
    """One player's base policies, selector and label memory."""

    def __init__(self, game: Game, capacity: int, config: FpemConfig, rng: np.random.Generator, name=MAX):
        self.config = config
        self.name = name
        self.policies = BasePolicySet(capacity)
        self.selector = SelectorModel(game.spec.observation_dim, config.selector_hidden, rng)
        self.memory = ReservoirMemory(config.reservoir_capacity, rng)
        self.selector_loss: Optional[float] = None
        self.heldout_loss: Optional[float] = None

    def __repr__(self):
        return f"<ExpandingSide({self.name}, {self.policies}, {self.memory})>"

    def __len__(self):
        return len(self.policies)

    def add(self, policy: BehaviorPolicy):
        self.policies.add(policy)
        self.selector.grow()

    def model(self, target: bool = False) -> FpemModel:
        return FpemModel(self.policies[:], self.selector.target if target else self.selector.net, self.name)

    def sample(self, rng: np.random.Generator) -> BehaviorPolicy:
        """Stands in for a pool draw: the target mixture over every base policy."""
        if not len(self):
            return UniformPolicy()
        return self.model(target=True)

    def as_policy(self) -> BehaviorPolicy:
        return self.model() if len(self) else UniformPolicy()

    def labeling_opponent(self, current: BehaviorPolicy, index: int):
        """
        A sampler of min-side training opponents: `current` under label `index` with
        probability 1 / (index + 1), otherwise W' over the first `index` base policies.
        Every decision taken on this side is stored in the memory.
        """
        labeled = LabeledPolicy(current, index, self.memory)
        mixture = None
        if index:
            if self.selector.target_size != index:
                raise DimensionError(f"target selector covers {self.selector.target_size} policies, expected {index}")
            mixture = FpemModel(self.policies[:index], self.selector.target, self.name, recorder=self.memory)

        def sampler(rng: np.random.Generator) -> BehaviorPolicy:
            opponent = sample_training_opponent(MIN, index + 1, None, mixture, labeled, rng)
            if opponent is mixture and self.config.label_mode == "episode":
                j = int(rng.integers(index))
                return LabeledPolicy(self.policies[j], j, self.memory)
            return opponent

        return sampler

    def retrain(self, rng: np.random.Generator):
        """Retrain W on the memory (held-out share excluded), then set W' = W."""
        items = list(self.memory.items)
        if items:
            order = rng.permutation(len(items))
            held = int(len(items) * self.config.holdout_fraction)
            heldout = [items[i] for i in order[:held]]
            training = [items[i] for i in order[held:]]
            optimizer = make_optimizer(self.config.selector_optimizer, self.config.selector_lr)
            self.selector_loss = train_selector(
                self.selector.net,
                training,
                optimizer,
                self.config.selector_epochs,
                rng,
                self.config.selector_batch,
            )
            self.heldout_loss = selector_loss(self.selector.net, heldout) if heldout else None
        self.selector.sync_target()


class Runner:
    """
    Drives an algorithm one iteration at a time and measures every iteration.
    Subclasses implement _iterate, profile and networks.
    """

    algo = "runner"

    def __init__(self, game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0):
        self.game = game
        self.config = config
        self.rng = rng
        self.run_id = run_id
        self.seed = seed
        self.iteration = 0
        self.episodes = 0
        self.records: List[MetricsRecord] = []
        self.training_logs: List[Tuple[int, str, TrainingLog]] = []

    def __repr__(self):
        return f"<{self.__class__.__name__}({self.game.name}, iteration={self.iteration}, episodes={self.episodes})>"

    @property
    def seats(self) -> Tuple[Optional[int], Optional[int]]:
        """Seats of the max and min learners; symmetric games draw seats per episode."""
        if self.game.symmetric:
            return None, None
        return PLAYER_1, PLAYER_2

    @property
    def finished(self) -> bool:
        return self.iteration >= self.config.iterations

    def step(self, workers: int = 1) -> MetricsRecord:
        t = self.iteration + 1
        try:
            self._iterate(t)
        except (DivergenceError, NonFiniteError) as e:
            raise DivergenceError(str(e), iteration=t) from e
        self.iteration = t
        record = self.measure(workers)
        self.records.append(record)
        return record

    def run(self, iterations: Optional[int] = None, workers: int = 1, on_iteration=None) -> List[MetricsRecord]:
        iterations = self.config.iterations if iterations is None else iterations
        while self.iteration < iterations:
            record = self.step(workers)
            if on_iteration is not None:
                on_iteration(self, record)
        return self.records

    def _iterate(self, t: int):
        raise NotImplementedError

    def _train(self, player: Optional[int], sampler, role: str, **kwargs) -> QPolicy:
        name = f"{role}-{self.iteration + 1}"
        policy, log = dqn_train_best_response(
            self.game, sampler, self.config.solver, self.rng, player=player, name=name, **kwargs
        )
        self.episodes += log.episodes
        self.training_logs.append((self.iteration + 1, role, log))
        return policy

    def drain_logs(self) -> List[Tuple[int, str, TrainingLog]]:
        logs, self.training_logs = self.training_logs, []
        return logs

    def profile(self) -> BehaviorPolicy:
        """What the algorithm currently plays, for both seats."""
        raise NotImplementedError

    def champion(self) -> BehaviorPolicy:
        """The policy measured against adversaries and other runs."""
        return self.profile()

    def networks(self) -> Dict[str, Mlp]:
        raise NotImplementedError

    def summary(self) -> Dict[str, object]:
        return {"algo": self.algo, "game": self.game.name, "iteration": self.iteration, "episodes": self.episodes}

    def measure(self, workers: int = 1) -> MetricsRecord:
        """Exact NashConv on Kuhn and the win rate against the uniform random policy."""
        mode = self.config.eval.mode
        nashconv = nashconv_of(self.profile(), mode, self.game) if self.game.name == "kuhn" else None
        stream = RngStream(self.seed, EVAL_STREAM, (self.iteration,))
        match = head_to_head(
            self.game,
            self.champion().evaluation_view(mode),
            UniformPolicy(),
            self.config.eval.episodes,
            stream,
            workers,
        )
        logger.info(
            "%s iteration %d: %d episodes, nashconv %s, win rate %.3f",
            self.algo,
            self.iteration,
            self.episodes,
            "n/a" if nashconv is None else f"{nashconv:.4f}",
            match.win_rate,
        )
        return MetricsRecord(
            self.run_id,
            self.algo,
            self.game.name,
            self.iteration,
            self.episodes,
            nashconv,
            None,
            match.win_rate,
            match.stderr,
            self.seed,
        )


class FpemRunner(Runner):
    """The alternating loop: the max player trains, then the min player, then W."""

    algo = "fpem"

    def __init__(self, game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0):
        super().__init__(game, config, rng, run_id, seed)
        fpem = config.fpem
        self.max_side = ExpandingSide(game, config.iterations, fpem, rng, MAX)
        self.min_side: Union[ExpandingSide, OpponentPool]
        if fpem.both_expand:
            self.min_side = ExpandingSide(game, config.iterations, fpem, rng, MIN)
        else:
            self.min_side = OpponentPool()
        self.pretrained: Optional[Mlp] = None

    @property
    def pool(self) -> Optional[OpponentPool]:
        return self.min_side if isinstance(self.min_side, OpponentPool) else None

    def pretrain(self):
        """Self-play a single network for a fraction of one iteration; new base policies start from it."""
        episodes = int(self.config.fpem.pretrain_fraction * self.config.solver.max_episodes)
        if self.game.spec.num_actions[0] != self.game.spec.num_actions[1]:
            raise ContractError("self-play pre-training needs the same actions in both seats")
        solver = replace(self.config.solver, max_episodes=episodes, stop_threshold=None)
        learner = DqnLearner(self.game.spec.observation_dim, self.game.spec.actions_of(PLAYER_1), solver, self.rng)
        for _ in range(episodes):
            policy = learner.acting_policy()
            trajectory = play_episode(self.game, policy, policy, self.rng)
            for seat in PLAYERS:
                learner.observe(player_transitions(trajectory, seat))
            learner.end_episode()
        self.episodes += episodes
        self.pretrained = learner.net.copy()
        logger.info("pre-trained by self-play for %d episodes", episodes)

    def _iterate(self, t: int):
        if t == 1 and self.config.fpem.pretrain_fraction > 0:
            self.pretrain()
        max_seat, min_seat = self.seats

        policy = self._train(max_seat, self.min_side.sample, MAX, init_net=self.pretrained)
        self.max_side.add(policy)

        sampler = self.max_side.labeling_opponent(policy, t - 1)
        policy = self._train(min_seat, sampler, MIN, init_net=self.pretrained)
        self.max_side.retrain(self.rng)

        if isinstance(self.min_side, OpponentPool):
            self.min_side.add(policy)
        else:
            self.min_side.add(policy)
            self._collect_min_labels(min_seat, t)
            self.min_side.retrain(self.rng)
        self._log_selectors()

    def _collect_min_labels(self, seat: Optional[int], t: int):
        """Label the min side's newest base policy by playing its 1/t mixture against the max model."""
        sampler = self.min_side.labeling_opponent(self.min_side.policies[t - 1], t - 1)
        against = self.max_side.model()
        for _ in range(self.config.fpem.label_episodes):
            labeled_seat = seat or PLAYERS[int(self.rng.integers(2))]
            play_seated(self.game, labeled_seat, sampler(self.rng), against, self.rng)
        self.episodes += self.config.fpem.label_episodes

    def _log_selectors(self):
        for side in (self.max_side, self.min_side):
            if isinstance(side, ExpandingSide) and side.selector_loss is not None:
                logger.info(
                    "%s selector over %d policies: loss %.4f, held-out %s (uniform %.4f)",
                    side.name,
                    len(side),
                    side.selector_loss,
                    "n/a" if side.heldout_loss is None else f"{side.heldout_loss:.4f}",
                    np.log(len(side)),
                )

    def profile(self) -> BehaviorPolicy:
        return SeatedPolicy(self.max_side.as_policy(), self.min_side.as_policy(), self.algo)

    def champion(self) -> BehaviorPolicy:
        if self.game.symmetric:
            return self.max_side.as_policy()
        return self.profile()

    def networks(self) -> Dict[str, Mlp]:
        nets = {}
        for side in (self.max_side, self.min_side):
            if isinstance(side, ExpandingSide):
                for j, policy in enumerate(side.policies):
                    nets[f"{side.name}/base_{j:02d}"] = policy.net
                if side.selector.net is not None:
                    nets[f"{side.name}/selector"] = side.selector.net
            else:
                for j, policy in enumerate(side.policies):
                    nets[f"pool/opponent_{j:02d}"] = policy.net
        return nets

    def summary(self) -> Dict[str, object]:
        summary = super().summary()
        summary["base_policies"] = len(self.max_side)
        summary["selector_outputs"] = self.max_side.selector.size
        summary["pool_size"] = len(self.min_side)
        summary["selector_loss"] = self.max_side.selector_loss
        summary["heldout_loss"] = self.max_side.heldout_loss
        return summary


class FpemV1Runner(FpemRunner):
    """
    Both learners train in the same iteration, one episode each in turn. A learner
    meets the other live learner with probability 1/t and the other side's frozen
    mixture otherwise; transitions from live matches feed both replay buffers.
    """

    algo = "fpemv1"

    def _iterate(self, t: int):
        if t == 1 and self.config.fpem.pretrain_fraction > 0:
            self.pretrain()
        max_seat, min_seat = self.seats
        solver = self.config.solver
        learners = {
            MAX: BestResponseTrainer(self.game, solver, self.rng, max_seat, f"{MAX}-{t}", self.pretrained),
            MIN: BestResponseTrainer(self.game, solver, self.rng, min_seat, f"{MIN}-{t}", self.pretrained),
        }
        sides = {MAX: self.min_side, MIN: self.max_side}

        while not all(learner.done for learner in learners.values()):
            for role, learner in learners.items():
                if learner.done:
                    continue
                other = learners[MIN if role == MAX else MAX]
                opponent, live = self._opponent(sides[role], other, t)
                seat = learner.draw_seat(self.rng)
                trajectory = play_seated(self.game, seat, learner.acting_policy(), opponent, self.rng)
                learner.record(trajectory, seat)
                if live:
                    other.observe(trajectory, PLAYER_2 if seat == PLAYER_1 else PLAYER_1)

        for role, side in ((MAX, self.max_side), (MIN, self.min_side)):
            policy, log = learners[role].result()
            self.episodes += log.episodes
            self.training_logs.append((t, role, log))
            side.add(policy)
        for side in (self.max_side, self.min_side):
            if isinstance(side, ExpandingSide):
                side.retrain(self.rng)
        self._log_selectors()

    def _opponent(self, side, other: BestResponseTrainer, t: int) -> Tuple[BehaviorPolicy, bool]:
        """An opponent drawn from `side`, or the other live learner; the flag tells which."""
        live = other.acting_policy()
        if isinstance(side, ExpandingSide):
            opponent = side.labeling_opponent(live, len(side))(self.rng)
            return opponent, isinstance(opponent, LabeledPolicy) and opponent.policy is live
        if self.rng.random() < 1.0 / t:
            return live, True
        return side.sample(self.rng), False


def run_fpem(game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0) -> FpemRunner:
    """Run every iteration of FPEM; the runner holds the base policies, selector, pool and metrics."""
    runner = FpemRunner(game, config, rng, run_id, seed)
    runner.run()
    return runner


def run_fpem_v1(game: Game, config, rng: np.random.Generator, run_id: str = "", seed: int = 0) -> FpemV1Runner:
    runner = FpemV1Runner(game, config, rng, run_id, seed)
    runner.run()
    return runner
