import pickle

import numpy as np
import pytest

from fpemlab.constants import PLAYER_1, PLAYER_2
from fpemlab.core import InfoState, Transition, UniformPolicy, play_episode
from fpemlab.dqn import (
    BestResponseTrainer,
    DqnLearner,
    EpsilonSchedule,
    QPolicy,
    ReplayBuffer,
    SolverConfig,
    StopWindow,
    WindowStats,
    dqn_train_best_response,
    outcome_for,
    stop_criterion,
    td_target,
)
from fpemlab.errors import ConfigurationError, ContractError
from fpemlab.kuhn import KuhnGame, expected_value
from fpemlab.nn import Mlp
from fpemlab.treasure import TreasureGame


def small_solver(**changes):
    settings = dict(
        hidden=(16,),
        batch_size=16,
        replay_capacity=500,
        learning_frequency=4,
        updates_per_burst=2,
        target_sync_interval=10,
        max_episodes=100,
        stop_window=10,
        log_interval=25,
    )
    settings.update(changes)
    return SolverConfig(**settings)


def transition(action, reward, terminal=True, dim=3):
    return Transition(np.ones(dim) * action, action, reward, np.zeros(dim), np.ones(2, dtype=bool), terminal)


def test_td_target():
    assert td_target(1.0, [0.5, 2.0], False, 0.9) == pytest.approx(2.8)
    assert td_target(1.0, [0.5, 2.0], True, 0.9) == 1.0
    assert td_target(-1.0, [3.0], False, 0.0) == -1.0
    assert td_target(0.0, [-1.0, -3.0], False, 1.0) == -1.0


def test_stop_criterion():
    assert not stop_criterion(WindowStats(2400, 1200, 6000), 0.2)
    assert stop_criterion(WindowStats(2401, 1200, 6000), 0.2)
    assert not stop_criterion(WindowStats(2400, 1201, 6000), 0.2)
    assert not stop_criterion(WindowStats(0, 0, 0), 0.2)
    assert stop_criterion(WindowStats(10, 0, 10), 0.99)
    assert not stop_criterion(WindowStats(0, 10, 10), -1.0)


def test_stop_window_running_counts():
    window = StopWindow(4)
    for outcome in (1, 1, -1, 0):
        window.record(outcome)
    assert window.full
    assert window.stats() == WindowStats(2, 1, 4)
    window.record(-1)
    window.record(-1)
    assert window.stats() == WindowStats(0, 3, 4)
    assert window.win_rate() == 0.0


def test_epsilon_schedule():
    schedule = EpsilonSchedule(1.0, 0.05, 0.2, 1000)
    assert schedule(0) == 1.0
    assert schedule(100) == pytest.approx(0.525)
    assert schedule(200) == pytest.approx(0.05)
    assert schedule(10_000) == pytest.approx(0.05)
    assert EpsilonSchedule(1.0, 0.1, 0.0, 1000)(0) == 0.1


def test_replay_buffer_evicts_the_oldest(rng):
    buffer = ReplayBuffer(3, 3, 2)
    for action in range(5):
        buffer.add(transition(action % 2, float(action)))
    assert len(buffer) == 3
    assert sorted(buffer.rewards) == [2.0, 3.0, 4.0]
    features, actions, rewards, _, _, terminal = buffer.sample(8, rng)
    assert features.shape == (8, 3)
    assert set(rewards) <= {2.0, 3.0, 4.0}
    assert terminal.all()


def test_replay_buffer_pickles_only_its_filled_rows():
    empty = ReplayBuffer(50_000, 20, 4)
    assert len(pickle.dumps(empty)) < 10_000

    buffer = ReplayBuffer(4, 3, 2)
    for action in range(6):
        buffer.add(transition(action % 2, float(action)))
    copy = pickle.loads(pickle.dumps(buffer))
    assert (copy.size, copy.cursor, copy.capacity) == (4, 2, 4)
    for name in ("features", "actions", "rewards", "next_features", "next_legal", "terminal"):
        assert np.array_equal(getattr(copy, name), getattr(buffer, name))
    copy.add(transition(1, 9.0))
    assert sorted(copy.rewards) == [3.0, 4.0, 5.0, 9.0]


def test_q_policy_respects_the_legal_actions():
    net = Mlp.from_layers([(np.eye(3), np.zeros(3))])
    infostate = InfoState("s", np.array([0.0, 5.0, 1.0]), (0, 2), PLAYER_1, 3)
    greedy = QPolicy(net, 0.0)
    assert np.allclose(greedy.act_distribution(infostate), [0.0, 0.0, 1.0])
    exploring = QPolicy(net, 0.5)
    assert np.allclose(exploring.act_distribution(infostate), [0.25, 0.0, 0.75])
    assert exploring.evaluation_view("greedy").epsilon == 0.0
    assert exploring.evaluation_view("stochastic") is exploring


def test_outcome_for(rng):
    trajectory = play_episode(KuhnGame(), UniformPolicy(), UniformPolicy(), rng)
    assert outcome_for(trajectory, PLAYER_1) == -outcome_for(trajectory, PLAYER_2) != 0


def test_learner_updates_every_learning_frequency_episodes(rng):
    config = small_solver()
    learner = DqnLearner(3, 2, config, rng)
    for i in range(config.batch_size):
        learner.observe([transition(i % 2, 1.0)])
    results = [learner.end_episode() for _ in range(8)]
    assert [r is not None for r in results] == [False, False, False, True, False, False, False, True]
    assert learner.updates == 4


def test_learner_fits_terminal_rewards(rng):
    config = small_solver(lr=1e-2, gamma=0.0)
    learner = DqnLearner(3, 2, config, rng)
    learner.observe([transition(0, -1.0), transition(1, 1.0)] * 20)
    for _ in range(300):
        learner.update()
    q = learner.net(np.array([np.zeros(3), np.ones(3)]))
    assert q[0, 0] == pytest.approx(-1.0, abs=0.1)
    assert q[1, 1] == pytest.approx(1.0, abs=0.1)


def test_target_network_syncs_on_schedule(rng):
    config = small_solver(target_sync_interval=5)
    learner = DqnLearner(3, 2, config, rng)
    learner.observe([transition(1, 1.0)] * 20)
    for _ in range(4):
        learner.update()
    assert learner.net.parameters_bytes() != learner.target_net.parameters_bytes()
    learner.update()
    assert learner.net.parameters_bytes() == learner.target_net.parameters_bytes()


def test_final_policy_is_frozen(rng):
    learner = DqnLearner(3, 2, small_solver(), rng)
    policy = learner.final_policy()
    assert policy.epsilon == 0.05
    learner.net.layers[0][0][...] += 1.0
    assert not np.array_equal(policy.net.layers[0][0], learner.net.layers[0][0])


def test_solver_config_validation():
    with pytest.raises(ConfigurationError) as info:
        small_solver(gamma=1.5).validate()
    assert info.value.field == "solver.gamma"
    with pytest.raises(ConfigurationError):
        small_solver(stop_threshold=0.2, stop_window=1000).validate()
    with pytest.raises(ConfigurationError):
        small_solver(optimizer="rmsprop").validate()


def test_budget_is_respected(rng):
    policy, log = dqn_train_best_response(KuhnGame(), lambda r: UniformPolicy(), small_solver(), rng)
    assert log.episodes == 100
    assert not log.stopped_early
    assert [row.episode for row in log.rows] == [25, 50, 75, 100]
    assert isinstance(policy, QPolicy)


def test_zero_budget(rng):
    policy, log = dqn_train_best_response(KuhnGame(), lambda r: UniformPolicy(), small_solver(max_episodes=0), rng)
    assert log.episodes == 0
    assert log.rows == []


def test_stop_rule_ends_training_when_the_window_is_full(rng):
    # Any window clears a threshold below -1.
    config = small_solver(stop_threshold=-1.5, stop_window=10)
    _, log = dqn_train_best_response(KuhnGame(), lambda r: UniformPolicy(), config, rng)
    assert log.stopped_early
    assert log.episodes == 10


def test_symmetric_games_draw_the_seat(rng):
    game = TreasureGame()
    trainer = BestResponseTrainer(game, small_solver(), rng, player=None)
    seats = {trainer.draw_seat(rng) for _ in range(50)}
    assert seats == {PLAYER_1, PLAYER_2}
    with pytest.raises(ContractError):
        BestResponseTrainer(KuhnGame(), small_solver(), rng, player=None)


def test_continued_learner_counts_episodes_from_its_start(rng):
    config = small_solver(max_episodes=20)
    first = BestResponseTrainer(KuhnGame(), config, rng)
    while not first.done:
        first.play(UniformPolicy(), rng)
    second = BestResponseTrainer(KuhnGame(), config, rng, learner=first.learner)
    assert second.episodes == 0
    while not second.done:
        second.play(UniformPolicy(), rng)
    assert second.learner.episodes == 40


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dqn_finds_the_best_response_to_uniform(seed):
    config = SolverConfig(gamma=1.0, hidden=(64,), max_episodes=50_000)
    rng = np.random.default_rng(seed)
    policy, _ = dqn_train_best_response(KuhnGame(), lambda r: UniformPolicy(), config, rng)
    # The exact best response earns 1/2.
    assert expected_value(policy.evaluation_view("greedy"), UniformPolicy()) >= 0.5 - 0.05
