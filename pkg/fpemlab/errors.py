"""All the errors raised by fpemlab. Catch FpemError to catch them all."""

__all__ = [
    "FpemError",
    "PolicyFaultError",
    "CoverageError",
    "ContractError",
    "DimensionError",
    "NonFiniteError",
    "DivergenceError",
    "ConfigurationError",
    "CorruptCheckpointError",
    "MissingCheckpointError",
    "UnsupportedGameError",
]


class FpemError(Exception):
    pass


class PolicyFaultError(FpemError):
    """A policy returned something that is not a distribution over the legal actions."""

    def __init__(self, player: int, reason: str):
        self.player = player
        self.reason = reason
        super().__init__(f"Policy of player {player} is faulty: {reason}")


class CoverageError(FpemError):
    """A policy is undefined at a reachable information state."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"Policy is not defined at information state {key!r}")


class ContractError(FpemError):
    pass


class DimensionError(FpemError):
    pass


class NonFiniteError(FpemError):
    pass


class DivergenceError(FpemError):
    def __init__(self, message: str, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


class ConfigurationError(FpemError):
    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"Invalid configuration for {field!r}: {reason}")


class CorruptCheckpointError(FpemError):
    def __init__(self, path, reason: str):
        self.path = path
        super().__init__(f"Corrupt checkpoint {path}: {reason}")


class MissingCheckpointError(FpemError):
    def __init__(self, directory, expected):
        self.expected = list(expected)
        listed = ", ".join(str(e) for e in self.expected)
        super().__init__(f"No usable checkpoint in {directory}; expected: {listed}")


class UnsupportedGameError(FpemError):
    def __init__(self, game: str, what: str):
        self.game = game
        super().__init__(f"{what} is not supported for game {game!r}")
