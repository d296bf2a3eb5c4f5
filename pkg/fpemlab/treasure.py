"""
Treasure hunting: a partially observable zero-sum gridworld.

Two players move simultaneously on a small grid with walls and treasures.
Each sees a diamond of radius 2 around itself. The first treasure a player
picks up is worth 1, the following ones 2. A carrier that ends a tick on the
opponent's cell loses one treasure to it (worth 2). Rewards are always paid
as a zero-sum pair.
"""
from collections import deque
from dataclasses import dataclass, field
from hashlib import blake2b
from typing import Deque, Dict, Iterator, List, Sequence, Set, Tuple

import numpy as np

from .constants import PLAYER_1, PLAYER_2
from .core import Game, GameSpec, GameState, InfoState
from .errors import ConfigurationError, ContractError

__all__ = [
    "UP",
    "DOWN",
    "LEFT",
    "RIGHT",
    "ACTIONS",
    "FOV_OFFSETS",
    "TreasureConfig",
    "GridMap",
    "TreasureObservation",
    "flood",
    "is_connected",
    "generate_map",
    "fov_cells",
    "frame_features",
    "observe",
    "step",
    "dump_map",
    "load_map",
    "TreasureState",
    "TreasureGame",
]

Cell = Tuple[int, int]

UP, DOWN, LEFT, RIGHT = range(4)
ACTIONS = (UP, DOWN, LEFT, RIGHT)
DIRECTIONS = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

# The diamond |dr| + |dc| <= 2, in a fixed order.
FOV_OFFSETS = [(dr, dc) for dr in range(-2, 3) for dc in range(-2, 3) if abs(dr) + abs(dc) <= 2]
CHANNELS = 4  # wall, treasure, opponent, out of bounds
FRAME_DIM = len(FOV_OFFSETS) * CHANNELS + 2 + 3

FIRST_TREASURE_REWARD = 1.0
NEXT_TREASURE_REWARD = 2.0
GRAB_REWARD = 2.0

WALL_CHAR, EMPTY_CHAR, TREASURE_CHAR = "#", ".", "*"
BOTH_PLAYERS_CHAR = "X"


@dataclass
class TreasureConfig:
    # Side of the square grid.
    size: int = 8
    # Fraction of the cells that are walls.
    obstacle_density: float = 0.15
    n_treasures: int = 4
    # Number of stacked observation frames given to the policies.
    frames: int = 4
    max_ticks: int = 100
    # Maps are regenerated until connected, at most this many times.
    max_tries: int = 1000

    def validate(self):
        if self.size < 3:
            raise ConfigurationError("treasure.size", "the grid must be at least 3x3")
        if not 0 <= self.obstacle_density < 1:
            raise ConfigurationError("treasure.obstacle_density", "must lie in [0, 1)")
        if self.n_treasures < 1:
            raise ConfigurationError("treasure.n_treasures", "at least one treasure is needed")
        if self.frames < 1:
            raise ConfigurationError("treasure.frames", "at least one frame is needed")
        if self.max_ticks < 1:
            raise ConfigurationError("treasure.max_ticks", "must be positive")
        n_walls = round(self.obstacle_density * self.size**2)
        if self.size**2 - n_walls < self.n_treasures + 2:
            raise ConfigurationError(
                "treasure.obstacle_density",
                f"{n_walls} walls leave no room for {self.n_treasures} treasures and 2 players",
            )


@dataclass
class GridMap:
    size: int
    walls: Set[Cell]
    treasures: Set[Cell]
    positions: List[Cell]
    carried: List[int] = field(default_factory=lambda: [0, 0])
    tick: int = 0
    max_ticks: int = 100
    # Treasures that vanished because both players reached them on the same tick.
    cancelled: int = 0

    def __str__(self):
        return dump_map(self)

    def copy(self) -> "GridMap":
        return GridMap(
            self.size,
            set(self.walls),
            set(self.treasures),
            list(self.positions),
            list(self.carried),
            self.tick,
            self.max_ticks,
            self.cancelled,
        )

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.size and 0 <= cell[1] < self.size

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls

    @property
    def done(self) -> bool:
        return not self.treasures or self.tick >= self.max_ticks

    @property
    def total_treasures(self) -> int:
        return len(self.treasures) + sum(self.carried) + self.cancelled


@dataclass
class TreasureObservation:
    fov_cells: Dict[Cell, Tuple[bool, bool, bool]]
    self_position: Tuple[float, float]
    carried_self: int
    carried_opponent_visible: int
    frame_stack: np.ndarray

    @property
    def features(self) -> np.ndarray:
        return self.frame_stack


def flood(start: Cell, size: int, walls: Set[Cell]) -> Iterator[Tuple[Cell, int]]:
    """Yield every free cell reachable from start, with its distance."""
    visited = {start}
    routes = deque([(start, 0)])
    while routes:
        cell, depth = routes.popleft()
        yield cell, depth
        for dr, dc in DIRECTIONS.values():
            nxt = (cell[0] + dr, cell[1] + dc)
            if nxt in visited or nxt in walls:
                continue
            if 0 <= nxt[0] < size and 0 <= nxt[1] < size:
                visited.add(nxt)
                routes.append((nxt, depth + 1))


def is_connected(size: int, walls: Set[Cell]) -> bool:
    """True if all the free cells are mutually reachable."""
    free = [(r, c) for r in range(size) for c in range(size) if (r, c) not in walls]
    if not free:
        return False
    return sum(1 for _ in flood(free[0], size, walls)) == len(free)


def generate_map(rng: np.random.Generator, config: TreasureConfig) -> GridMap:
    """Random walls, treasures and players, regenerated until every free cell is reachable."""
    config.validate()
    cells = [(r, c) for r in range(config.size) for c in range(config.size)]
    n_walls = round(config.obstacle_density * len(cells))

    for _ in range(config.max_tries):
        order = rng.permutation(len(cells))
        walls = {cells[i] for i in order[:n_walls]}
        if not is_connected(config.size, walls):
            continue
        others = [cells[i] for i in order[n_walls : n_walls + config.n_treasures + 2]]
        return GridMap(
            size=config.size,
            walls=walls,
            treasures=set(others[2:]),
            positions=others[:2],
            max_ticks=config.max_ticks,
        )

    raise ConfigurationError(
        "treasure.obstacle_density",
        f"no connected map found in {config.max_tries} tries",
    )


def fov_cells(grid: GridMap, player: int) -> List[Cell]:
    """The in-bounds cells of the diamond around a player."""
    r, c = grid.positions[player - 1]
    cells = [(r + dr, c + dc) for dr, dc in FOV_OFFSETS]
    return [cell for cell in cells if grid.in_bounds(cell)]


def frame_features(grid: GridMap, player: int) -> np.ndarray:
    """One observation frame, from the point of view of player."""
    me = grid.positions[player - 1]
    opponent = grid.positions[2 - player]
    features = np.zeros(FRAME_DIM)
    opponent_visible = False

    for i, (dr, dc) in enumerate(FOV_OFFSETS):
        cell = (me[0] + dr, me[1] + dc)
        base = i * CHANNELS
        if not grid.in_bounds(cell):
            features[base + 3] = 1.0
            continue
        features[base] = cell in grid.walls
        features[base + 1] = cell in grid.treasures
        if cell == opponent:
            features[base + 2] = 1.0
            opponent_visible = True

    tail = len(FOV_OFFSETS) * CHANNELS
    scale = max(grid.size - 1, 1)
    features[tail] = me[0] / scale
    features[tail + 1] = me[1] / scale
    features[tail + 2] = grid.carried[player - 1]
    features[tail + 3] = grid.carried[2 - player] if opponent_visible else 0
    features[tail + 4] = opponent_visible
    return features


def observe(grid: GridMap, player: int, history_buffer: Sequence[np.ndarray], frames: int = 4) -> TreasureObservation:
    """
    The current frame stacked after the last frames - 1 frames of history_buffer
    (oldest first, zero padded). Does not modify the buffer.
    """
    current = frame_features(grid, player)
    past = list(history_buffer)[-(frames - 1) :] if frames > 1 else []
    padding = [np.zeros(FRAME_DIM)] * (frames - 1 - len(past))
    stack = np.concatenate(padding + past + [current])

    me = grid.positions[player - 1]
    opponent = grid.positions[2 - player]
    cells = {
        cell: (cell in grid.walls, cell in grid.treasures, cell == opponent)
        for cell in fov_cells(grid, player)
    }
    scale = max(grid.size - 1, 1)
    return TreasureObservation(
        fov_cells=cells,
        self_position=(me[0] / scale, me[1] / scale),
        carried_self=grid.carried[player - 1],
        carried_opponent_visible=grid.carried[2 - player] if opponent in cells else 0,
        frame_stack=stack,
    )


def step(grid: GridMap, joint_action: Tuple[int, int]) -> Tuple[GridMap, Tuple[float, float], bool]:
    """
    Apply both moves at once. Resolution order: moves (walls and borders block),
    then grabs, then pickups.
    """
    if grid.done:
        raise ContractError("cannot step a finished treasure hunt")
    grid = grid.copy()
    rewards = [0.0, 0.0]

    for i, action in enumerate(joint_action):
        if action not in DIRECTIONS:
            raise ContractError(f"unknown action {action!r}")
        dr, dc = DIRECTIONS[action]
        r, c = grid.positions[i]
        target = (r + dr, c + dc)
        if grid.is_free(target):
            grid.positions[i] = target

    # A carrier sharing a cell with a treasure-less opponent loses one treasure to it.
    if grid.positions[0] == grid.positions[1]:
        carriers = [i for i in range(2) if grid.carried[i] > 0]
        if len(carriers) == 1:
            loser = carriers[0]
            grid.carried[loser] -= 1
            grid.carried[1 - loser] += 1
            rewards[loser] -= GRAB_REWARD
            rewards[1 - loser] += GRAB_REWARD

    if grid.positions[0] == grid.positions[1] and grid.positions[0] in grid.treasures:
        grid.treasures.remove(grid.positions[0])
        grid.cancelled += 1
    else:
        for i in range(2):
            cell = grid.positions[i]
            if cell in grid.treasures:
                grid.treasures.remove(cell)
                gain = FIRST_TREASURE_REWARD if grid.carried[i] == 0 else NEXT_TREASURE_REWARD
                grid.carried[i] += 1
                rewards[i] += gain
                rewards[1 - i] -= gain

    grid.tick += 1
    return grid, (rewards[0], rewards[1]), grid.done


def dump_map(grid: GridMap) -> str:
    """Plain text grid: # wall, . empty, * treasure, 1 and 2 the players (X if they share a cell)."""
    rows = []
    for r in range(grid.size):
        row = []
        for c in range(grid.size):
            cell = (r, c)
            if grid.positions[0] == grid.positions[1] == cell:
                row.append(BOTH_PLAYERS_CHAR)
            elif cell == grid.positions[0]:
                row.append("1")
            elif cell == grid.positions[1]:
                row.append("2")
            elif cell in grid.walls:
                row.append(WALL_CHAR)
            elif cell in grid.treasures:
                row.append(TREASURE_CHAR)
            else:
                row.append(EMPTY_CHAR)
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def load_map(text: str, max_ticks: int = 100) -> GridMap:
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    size = len(rows)
    if any(len(row) != size for row in rows):
        raise ConfigurationError("map", "the grid must be square")

    walls, treasures, positions = set(), set(), {}
    for r, row in enumerate(rows):
        for c, char in enumerate(row):
            if char == WALL_CHAR:
                walls.add((r, c))
            elif char == TREASURE_CHAR:
                treasures.add((r, c))
            elif char in "12":
                positions[int(char)] = (r, c)
            elif char == BOTH_PLAYERS_CHAR:
                positions[PLAYER_1] = positions[PLAYER_2] = (r, c)
            elif char != EMPTY_CHAR:
                raise ConfigurationError("map", f"unknown character {char!r}")
    if set(positions) != {PLAYER_1, PLAYER_2}:
        raise ConfigurationError("map", "both players must be on the map")

    return GridMap(size, walls, treasures, [positions[PLAYER_1], positions[PLAYER_2]], max_ticks=max_ticks)


class TreasureState(GameState):
    def __init__(self, grid: GridMap, frames: int):
        self.grid = grid
        self.frames = frames
        self.history: Dict[int, Deque[np.ndarray]] = {
            p: deque(maxlen=max(frames - 1, 1)) for p in (PLAYER_1, PLAYER_2)
        }
        self._infostates: Dict[int, InfoState] = {}

    def __repr__(self):
        return f"<TreasureState(tick={self.grid.tick}, carried={self.grid.carried})>"

    @property
    def tick(self):
        return self.grid.tick

    def is_terminal(self) -> bool:
        return self.grid.done

    def acting_players(self) -> Tuple[int, ...]:
        return (PLAYER_1, PLAYER_2)

    def infostate(self, player: int) -> InfoState:
        if player not in self._infostates:
            history = self.history[player] if self.frames > 1 else ()
            features = observe(self.grid, player, history, self.frames).features
            features.flags.writeable = False
            digest = blake2b(features.tobytes(), digest_size=12).hexdigest()
            self._infostates[player] = InfoState(f"{player}:{digest}", features, ACTIONS, player, len(ACTIONS))
        return self._infostates[player]

    def apply_actions(self, actions: Dict[int, int]) -> Tuple[float, float]:
        if self.frames > 1:
            for player in (PLAYER_1, PLAYER_2):
                self.history[player].append(frame_features(self.grid, player))
        self.grid, rewards, _ = step(self.grid, (actions[PLAYER_1], actions[PLAYER_2]))
        self._infostates.clear()
        return rewards


class TreasureGame(Game):
    name = "treasure"
    symmetric = True

    def __init__(self, config: TreasureConfig = None):
        self.config = config or TreasureConfig()
        self.config.validate()
        self.spec = GameSpec(
            num_actions=(len(ACTIONS), len(ACTIONS)),
            max_episode_length=self.config.max_ticks,
            observation_dim=FRAME_DIM * self.config.frames,
        )

    def __repr__(self):
        return f"<TreasureGame({self.config})>"

    def new_initial_state(self, rng: np.random.Generator) -> TreasureState:
        return TreasureState(generate_map(rng, self.config), self.config.frames)
