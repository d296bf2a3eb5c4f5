import numpy as np
import pytest

from fpemlab.config import parse_config
from fpemlab.core import TabularPolicy
from fpemlab.kuhn import kuhn_infostates

# Small enough for a whole run to take seconds.
TINY = {
    "run.iterations": "2",
    "solver.max_episodes": "60",
    "solver.hidden": "16",
    "solver.batch_size": "16",
    "solver.replay_capacity": "1000",
    "solver.learning_frequency": "4",
    "solver.updates_per_burst": "2",
    "solver.target_sync_interval": "10",
    "solver.stop_window": "20",
    "solver.log_interval": "20",
    "fpem.label_episodes": "30",
    "fpem.selector_hidden": "16",
    "fpem.selector_batch": "16",
    "fpem.reservoir_capacity": "500",
    "nfsp.average_hidden": "16",
    "nfsp.average_batch": "16",
    "psro.sims_per_entry": "50",
    "psro.rm_iterations": "200",
    "eval.episodes": "40",
    "eval.h2h_episodes": "40",
    "eval.adversary_episodes": "40",
    "eval.adversary_eval_episodes": "40",
    "eval.adversary_hidden": "16",
    "eval.plateau_window": "20",
}
TINY_TREASURE = {
    "treasure.size": "5",
    "treasure.obstacle_density": "0.1",
    "treasure.n_treasures": "2",
    "treasure.frames": "2",
    "treasure.max_ticks": "20",
}


def tiny_overrides(algo="fpem", game="kuhn", **extra):
    overrides = {"run.algo": algo, "run.game": game, **TINY}
    if game == "treasure":
        overrides.update(TINY_TREASURE)
    overrides.update({key.replace("__", "."): str(value) for key, value in extra.items()})
    return overrides


def tiny_config(algo="fpem", game="kuhn", **extra):
    """A validated RunConfig for a run of a few seconds. Extra settings are passed as section__key=value."""
    return parse_config("", tiny_overrides(algo, game, **extra))


def random_kuhn_policy(rng, name="random"):
    return TabularPolicy({s.key: rng.dirichlet(np.ones(2)) for s in kuhn_infostates()}, name)


def constant_kuhn_policy(action, name="constant"):
    return TabularPolicy({s.key: np.eye(2)[action] for s in kuhn_infostates()}, name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
