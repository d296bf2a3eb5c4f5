from pathlib import Path

ROOT_DIR = Path(__file__).parent.parent
DEFAULT_OUT = ROOT_DIR / "runs"

PLAYER_1 = 1
PLAYER_2 = 2
PLAYERS = (PLAYER_1, PLAYER_2)

# Outcomes, from player 1's point of view.
WIN = "player1"
LOSS = "player2"
TIE = "tie"

ALGORITHMS = ["fpem", "fpemv1", "nfsp", "smv1", "smv2", "oppo", "psro"]
GAMES = ["kuhn", "treasure"]
EVAL_MODES = ["nashconv", "exploit", "h2h"]
POLICY_MODES = ["greedy", "epsilon", "stochastic"]

# Checkpoint codec
CHECKPOINT_MAGIC = b"FPEMCKPT"
CHECKPOINT_VERSION = 1

METRICS_HEADER = [
    "run_id",
    "algo",
    "game",
    "iteration",
    "episodes",
    "nashconv",
    "avg_loss",
    "win_rate",
    "stderr",
    "seed",
]
TRAINING_LOG_HEADER = ["algo", "iteration", "player", "episode", "window_win_rate", "loss", "epsilon"]

MANIFEST_FILE = "manifest.txt"
METRICS_FILE = "metrics.csv"
TRAINING_LOG_FILE = "training_log.csv"
ITERATION_GLOB = "iter_[0-9]*"
STATE_FILE = "state.txt"
SNAPSHOT_FILE = "runner.pkl"
RESUME_FILE = "resume.pkl"
RNG_FILE = "rng.json"

LOG_LEVEL_ENV = "FPEM_LOG_LEVEL"

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
