import numpy as np
import pytest

from fpemlab.constants import PLAYER_1, PLAYER_2
from fpemlab.core import UniformPolicy, play_episode
from fpemlab.errors import ConfigurationError, ContractError
from fpemlab.treasure import (
    DOWN,
    FOV_OFFSETS,
    LEFT,
    RIGHT,
    UP,
    TreasureConfig,
    TreasureGame,
    dump_map,
    fov_cells,
    frame_features,
    generate_map,
    is_connected,
    load_map,
    observe,
    step,
)

OPEN = """
1*...
.....
..#..
.....
...*2
"""

CORRIDOR = """
1**#.
.....
.....
.....
....2
"""

FACE_OFF = """
1.2..
.....
.....
.....
....*
"""

CONTESTED = """
1*2..
.....
.....
.....
....*
"""


def test_field_of_view_sizes():
    assert len(FOV_OFFSETS) == 13
    grid = load_map(OPEN)
    assert len(fov_cells(grid, PLAYER_1)) == 6
    grid.positions[0] = (2, 1)
    assert len(fov_cells(grid, PLAYER_1)) == 12
    grid.positions[0] = (2, 2)
    assert len(fov_cells(grid, PLAYER_1)) == 13


def test_load_and_dump():
    grid = load_map(OPEN)
    assert grid.size == 5
    assert grid.walls == {(2, 2)}
    assert grid.treasures == {(0, 1), (4, 3)}
    assert grid.positions == [(0, 0), (4, 4)]
    assert dump_map(grid) == OPEN.lstrip()


def test_load_rejects_bad_maps():
    with pytest.raises(ConfigurationError):
        load_map("1.\n..2\n")
    with pytest.raises(ConfigurationError):
        load_map("1.\n..\n")
    with pytest.raises(ConfigurationError):
        load_map("1?\n.2\n")


def test_first_treasure_is_worth_one_the_next_two():
    grid = load_map(CORRIDOR)
    grid, rewards, done = step(grid, (RIGHT, UP))
    assert rewards == (1.0, -1.0)
    assert grid.carried == [1, 0]
    grid, rewards, done = step(grid, (RIGHT, UP))
    assert rewards == (2.0, -2.0)
    assert grid.carried == [2, 0]
    assert done


def test_walls_and_borders_block():
    grid = load_map(CORRIDOR)
    grid, _, _ = step(grid, (UP, DOWN))
    assert grid.positions == [(0, 0), (4, 4)]
    grid, _, _ = step(grid, (LEFT, RIGHT))
    assert grid.positions == [(0, 0), (4, 4)]

    grid = load_map(CORRIDOR)
    grid.positions[0] = (0, 2)
    grid.treasures = {(4, 0)}
    grid, _, _ = step(grid, (RIGHT, UP))
    assert grid.positions[0] == (0, 2)


def test_step_does_not_modify_its_input():
    grid = load_map(CORRIDOR)
    after, _, _ = step(grid, (RIGHT, UP))
    assert grid.positions == [(0, 0), (4, 4)]
    assert grid.treasures == {(0, 1), (0, 2)}
    assert after.tick == 1 and grid.tick == 0


def test_grab_takes_one_treasure_from_the_carrier():
    grid = load_map(FACE_OFF)
    grid.carried = [1, 0]
    grid, rewards, done = step(grid, (RIGHT, LEFT))
    assert grid.positions == [(0, 1), (0, 1)]
    assert rewards == (-2.0, 2.0)
    assert grid.carried == [0, 1]
    assert grid.total_treasures == 2
    assert not done


def test_no_grab_between_two_carriers():
    grid = load_map(FACE_OFF)
    grid.carried = [1, 1]
    grid, rewards, _ = step(grid, (RIGHT, LEFT))
    assert rewards == (0.0, 0.0)
    assert grid.carried == [1, 1]


def test_contested_treasure_vanishes():
    grid = load_map(CONTESTED)
    grid, rewards, done = step(grid, (RIGHT, LEFT))
    assert rewards == (0.0, 0.0)
    assert grid.treasures == {(4, 4)}
    assert grid.cancelled == 1
    assert grid.total_treasures == 2
    assert not done


def test_finished_hunts_cannot_step():
    grid = load_map(OPEN, max_ticks=1)
    grid, _, done = step(grid, (DOWN, UP))
    assert done
    with pytest.raises(ContractError):
        step(grid, (DOWN, UP))
    with pytest.raises(ContractError):
        step(load_map(OPEN), (7, UP))


def test_generated_maps(rng):
    config = TreasureConfig()
    for _ in range(20):
        grid = generate_map(rng, config)
        assert len(grid.walls) == round(config.obstacle_density * config.size**2)
        assert len(grid.treasures) == config.n_treasures
        assert grid.positions[0] != grid.positions[1]
        occupied = set(grid.positions) | grid.treasures
        assert not occupied & grid.walls
        assert not set(grid.positions) & grid.treasures
        assert is_connected(grid.size, grid.walls)


def test_infeasible_config():
    with pytest.raises(ConfigurationError) as info:
        TreasureConfig(size=3, obstacle_density=0.9).validate()
    assert info.value.field == "treasure.obstacle_density"
    with pytest.raises(ConfigurationError):
        TreasureGame(TreasureConfig(n_treasures=0))


def test_observation_is_from_the_observer():
    grid = load_map(OPEN)
    features_1 = frame_features(grid, PLAYER_1)
    features_2 = frame_features(grid, PLAYER_2)
    # Same map, different points of view.
    assert not np.array_equal(features_1, features_2)
    grid.positions = [grid.positions[1], grid.positions[0]]
    assert np.array_equal(frame_features(grid, PLAYER_2), features_1)


def test_observe_stacks_frames_without_touching_the_buffer():
    grid = load_map(OPEN)
    history = [frame_features(grid, PLAYER_1)]
    observation = observe(grid, PLAYER_1, history, frames=4)
    assert len(history) == 1
    assert observation.features.shape == (4 * len(history[0]),)
    assert observation.carried_self == 0
    assert observation.self_position == (0.0, 0.0)
    assert len(observation.fov_cells) == 6
    # Two zero frames, then the history, then the current frame.
    assert not observation.features[: 2 * len(history[0])].any()


def run_random_episodes(game, n, rng):
    for _ in range(n):
        state = game.new_initial_state(rng)
        total = game.config.n_treasures
        ticks = 0
        while not state.is_terminal():
            actions = {p: int(rng.integers(4)) for p in state.acting_players()}
            rewards = state.apply_actions(actions)
            ticks += 1
            assert rewards[0] + rewards[1] == 0
            assert state.grid.total_treasures == total
            assert min(state.grid.carried) >= 0
        assert ticks <= game.config.max_ticks


def test_random_episodes_keep_the_invariants(rng):
    run_random_episodes(TreasureGame(), 200, rng)


@pytest.mark.slow
def test_many_random_episodes_keep_the_invariants(rng):
    run_random_episodes(TreasureGame(), 10_000, rng)


def test_game_interface(rng):
    game = TreasureGame(TreasureConfig(size=5, n_treasures=2, frames=2, max_ticks=30, obstacle_density=0.1))
    assert game.symmetric
    assert game.spec.num_actions == (4, 4)
    state = game.new_initial_state(rng)
    infostate = state.infostate(PLAYER_1)
    assert infostate.features.shape == (game.spec.observation_dim,)
    assert infostate.legal_actions == (UP, DOWN, LEFT, RIGHT)
    trajectory = play_episode(game, UniformPolicy(), UniformPolicy(), rng)
    assert 1 <= len(trajectory) <= 30
