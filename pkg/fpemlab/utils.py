import logging
import os
from typing import Optional, Tuple

from .constants import LOG_LEVEL_ENV

__all__ = ["clamp", "chrange", "setup_logging", "stderr_of_mean"]


def clamp(value, mini, maxi):
    """Clamp value between mini and maxi"""
    if value < mini:
        return mini
    elif maxi < value:
        return maxi
    else:
        return value


def chrange(x: float, initial_range: Tuple[float, float], target_range: Tuple[float, float]):
    """Change the range of a number by mapping the initial_range to target_range using a linear transformation."""
    normalised = (x - initial_range[0]) / (initial_range[1] - initial_range[0])
    return normalised * (target_range[1] - target_range[0]) + target_range[0]


def stderr_of_mean(total: float, total_sq: float, n: int) -> float:
    """Standard error of a mean computed from running sums."""
    if n < 2:
        return 0.0
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return (var / n) ** 0.5


def setup_logging(level: Optional[str] = None):
    """Route every fpemlab logger through rich. The level falls back to $FPEM_LOG_LEVEL."""
    from rich.logging import RichHandler

    level = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "INFO"
    logger = logging.getLogger("fpemlab")
    logger.handlers.clear()
    logger.addHandler(RichHandler(show_path=False, rich_tracebacks=True))
    logger.setLevel(level)
    logger.propagate = False
    return logger
