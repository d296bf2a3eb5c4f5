"""
Run configuration: a tree of dataclasses read from and written to a
line-oriented text format.

    # comments and blank lines are ignored
    run.algo = fpem
    run.game = kuhn
    solver.max_episodes = 50000
    fpem.selector_hidden = 64,64

Top-level settings live in the `run` section. A file only needs the settings
it changes: the rest comes from default_config(algo, game).
"""
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Dict, Iterable, Optional, Tuple

from .baselines import NfspConfig, PsroConfig
from .constants import ALGORITHMS, DEFAULT_OUT, GAMES
from .core import Game
from .dqn import SolverConfig
from .errors import ConfigurationError
from .evaluation import EvalConfig
from .fpem import FpemConfig
from .kuhn import KuhnGame
from .treasure import TreasureConfig, TreasureGame

__all__ = ["RunConfig", "default_config", "parse_config", "parse_overrides", "apply_overrides", "load_config"]

RUN_SECTION = "run"
SECTIONS = ("solver", "fpem", "nfsp", "psro", "treasure", "eval")


@dataclass
class RunConfig:
    algo: str = "fpem"
    game: str = "kuhn"
    # T: base policies for FPEM, pool entries for the pool based methods.
    iterations: int = 10
    seeds: Tuple[int, ...] = (0,)
    out: str = str(DEFAULT_OUT)
    # Processes used for evaluation rollouts.
    workers: int = 1
    solver: SolverConfig = field(default_factory=SolverConfig)
    fpem: FpemConfig = field(default_factory=FpemConfig)
    nfsp: NfspConfig = field(default_factory=NfspConfig)
    psro: PsroConfig = field(default_factory=PsroConfig)
    treasure: TreasureConfig = field(default_factory=TreasureConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        if self.algo not in ALGORITHMS:
            raise ConfigurationError("run.algo", f"must be one of {', '.join(ALGORITHMS)}")
        if self.game not in GAMES:
            raise ConfigurationError("run.game", f"must be one of {', '.join(GAMES)}")
        if self.algo == "psro" and self.game != "kuhn":
            raise ConfigurationError("run.algo", "psro only runs on kuhn")
        if self.iterations < 1:
            raise ConfigurationError("run.iterations", "must be positive")
        if not self.seeds:
            raise ConfigurationError("run.seeds", "at least one seed is needed")
        if self.workers < 1:
            raise ConfigurationError("run.workers", "must be positive")
        if self.solver.max_episodes < 1:
            raise ConfigurationError("solver.max_episodes", "must be positive")
        self.solver.validate()
        self.fpem.validate()
        self.nfsp.validate()
        self.psro.validate()
        self.treasure.validate()
        self.eval.validate()
        return self

    def make_game(self) -> Game:
        if self.game == "kuhn":
            return KuhnGame()
        return TreasureGame(self.treasure)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if is_dataclass(value):
                continue
            lines.append(f"{RUN_SECTION}.{f.name} = {_format(value)}")
        for section in SECTIONS:
            lines.append("")
            sub = getattr(self, section)
            for f in fields(sub):
                lines.append(f"{section}.{f.name} = {_format(getattr(sub, f.name))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _convert(key: str, text: str, hint):
    if getattr(hint, "__origin__", None) is typing.Union:
        if text.lower() == "none":
            return None
        hint = next(arg for arg in hint.__args__ if arg is not type(None))
    try:
        if hint is bool:
            lowered = text.lower()
            if lowered not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return lowered in ("true", "yes", "1")
        if hint is int:
            number = float(text)
            if not number.is_integer():
                raise ValueError(text)
            return int(number)
        if hint is float:
            return float(text)
        if getattr(hint, "__origin__", None) in (tuple, Tuple):
            return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigurationError(key, f"cannot read {text!r} as {getattr(hint, '__name__', hint)}") from None
    return text


def _set(target, name: str, key: str, text: str):
    hints = typing.get_type_hints(type(target))
    if name not in hints or is_dataclass(getattr(target, name)):
        raise ConfigurationError(key, "unknown setting")
    return replace(target, **{name: _convert(key, text, hints[name])})


def apply_overrides(config: RunConfig, overrides: Dict[str, str]) -> RunConfig:
    """Return a copy of config with `section.key` settings replaced."""
    for key, text in overrides.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigurationError(key, "settings are written section.key")
        if section == RUN_SECTION:
            config = _set(config, name, key, text)
        elif section in SECTIONS:
            config = replace(config, **{section: _set(getattr(config, section), name, key, text)})
        else:
            raise ConfigurationError(key, f"unknown section {section!r}")
    return config


def parse_overrides(lines: Iterable[str]) -> Dict[str, str]:
    overrides = {}
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"line {number}", f"expected section.key = value, got {line!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def default_config(algo: str = "fpem", game: str = "kuhn") -> RunConfig:
    """Desk-scale defaults for an algorithm on a game."""
    if game == "treasure":
        config = RunConfig(
            algo=algo,
            game=game,
            iterations=5,
            solver=SolverConfig(
                gamma=0.99,
                hidden=(128, 128, 128, 128),
                max_episodes=100_000,
                stop_threshold=0.2,
                stop_window=6000,
            ),
            fpem=FpemConfig(reservoir_capacity=20_000, selector_hidden=(128, 128)),
            nfsp=NfspConfig(eta=0.25, average_hidden=(128, 128, 128, 128)),
            eval=EvalConfig(adversary_hidden=(128, 128, 128, 128)),
        )
    else:
        config = RunConfig(
            algo=algo,
            game=game,
            iterations=10,
            solver=SolverConfig(gamma=1.0, hidden=(64,), max_episodes=50_000),
            fpem=FpemConfig(both_expand=True),
            nfsp=NfspConfig(eta=0.1),
        )
    return config


def parse_config(text: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """
    Read a config file's text. Later overrides win over the file; algo and game
    are resolved first so that their defaults are the starting point.
    """
    settings = parse_overrides(text.splitlines())
    settings.update(overrides or {})
    algo = settings.get(f"{RUN_SECTION}.algo", "fpem")
    game = settings.get(f"{RUN_SECTION}.game", "kuhn")
    if game not in GAMES:
        raise ConfigurationError("run.game", f"must be one of {', '.join(GAMES)}")
    return apply_overrides(default_config(algo, game), settings).validate()


def load_config(path, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read(), overrides)
