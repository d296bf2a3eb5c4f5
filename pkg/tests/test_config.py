import pytest

from conftest import tiny_config
from fpemlab.config import apply_overrides, default_config, load_config, parse_config, parse_overrides
from fpemlab.errors import ConfigurationError
from fpemlab.kuhn import KuhnGame
from fpemlab.treasure import TreasureGame


def test_defaults_per_game():
    kuhn = default_config("fpem", "kuhn")
    assert kuhn.solver.gamma == 1.0
    assert kuhn.solver.stop_threshold is None
    assert kuhn.fpem.both_expand
    assert isinstance(kuhn.make_game(), KuhnGame)

    treasure = default_config("nfsp", "treasure")
    assert treasure.solver.hidden == (128, 128, 128, 128)
    assert treasure.solver.stop_threshold == 0.2
    assert treasure.solver.stop_window == 6000
    assert treasure.treasure.size == 8
    assert not treasure.fpem.both_expand
    assert isinstance(treasure.make_game(), TreasureGame)


@pytest.mark.parametrize("algo, game", [("fpem", "kuhn"), ("oppo", "treasure"), ("psro", "kuhn")])
def test_config_text_round_trip(algo, game):
    config = tiny_config(algo, game, run__seeds="0,1,2")
    assert parse_config(config.to_text()) == config


def test_psro_needs_kuhn():
    with pytest.raises(ConfigurationError) as info:
        tiny_config("psro", "treasure")
    assert info.value.field == "run.algo"


def test_unknown_settings():
    with pytest.raises(ConfigurationError) as info:
        parse_config("solver.learning_rate = 0.1\n")
    assert info.value.field == "solver.learning_rate"
    with pytest.raises(ConfigurationError):
        parse_config("bogus.key = 1\n")
    with pytest.raises(ConfigurationError):
        parse_config("run.solver = 1\n")
    with pytest.raises(ConfigurationError):
        parse_config("iterations = 3\n")


def test_bad_values():
    with pytest.raises(ConfigurationError) as info:
        parse_config("run.iterations = three\n")
    assert info.value.field == "run.iterations"
    with pytest.raises(ConfigurationError):
        parse_config("run.iterations = 2.5\n")
    with pytest.raises(ConfigurationError):
        parse_config("fpem.both_expand = maybe\n")
    with pytest.raises(ConfigurationError) as info:
        parse_config("solver.gamma = 2\n")
    assert info.value.field == "solver.gamma"
    with pytest.raises(ConfigurationError):
        parse_config("run.game = chess\n")
    with pytest.raises(ConfigurationError) as info:
        parse_config("fpem.selector_optimizer = rmsprop\n")
    assert info.value.field == "fpem.selector_optimizer"
    assert parse_config("fpem.selector_optimizer = sgd\n").fpem.selector_optimizer == "sgd"


def test_parse_overrides():
    text = """
    # a comment
    run.iterations = 4   # trailing
    solver.hidden = 32,32

    """
    assert parse_overrides(text.splitlines()) == {"run.iterations": "4", "solver.hidden": "32,32"}
    with pytest.raises(ConfigurationError) as info:
        parse_overrides(["run.iterations 4"])
    assert info.value.field == "line 1"


def test_later_settings_win(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("run.iterations = 4\nsolver.lr = 0.01\n")
    config = load_config(path, {"run.iterations": "6"})
    assert config.iterations == 6
    assert config.solver.lr == 0.01
    assert apply_overrides(config, {"solver.lr": "0.5"}).solver.lr == 0.5
    assert config.solver.lr == 0.01


def test_file_algo_and_game_pick_the_defaults():
    config = parse_config("run.game = treasure\nrun.algo = smv2\n")
    assert config.algo == "smv2"
    assert config.solver.stop_threshold == 0.2


def test_tuples_and_none():
    config = parse_config("solver.hidden = 8, 16\nsolver.stop_threshold = none\nrun.seeds = 3\n")
    assert config.solver.hidden == (8, 16)
    assert config.solver.stop_threshold is None
    assert config.seeds == (3,)
    config = parse_config("solver.stop_threshold = 0.3\nsolver.stop_window = 100\n")
    assert config.solver.stop_threshold == 0.3
