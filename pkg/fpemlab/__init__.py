from .core import play_episode, rollout_batch, RngStream, UniformPolicy
from .config import RunConfig, default_config, load_config
from .fpem import FpemRunner, FpemV1Runner, run_fpem
from .runs import RunDir, get_runs, train
