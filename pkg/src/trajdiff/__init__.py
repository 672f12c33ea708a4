"""Conditional diffusion for stochastic pedestrian trajectory forecasting."""

from .data import (Checkpoint, SyntheticSpec, TrajectoryWindow, generate_synthetic,
                   load_checkpoint, load_scene, make_windows, save_checkpoint)
from .diffusion import (forward_sample, posterior_mean, reconstruct_y0, reparam_mean,
                        reverse_step, simple_loss)
from .estimator import MotionDiffusion
from .evaluation import ade, best_of_n, diversity, fde, min_k, sample
from .model import DiffusionNet, ModelConfig
from .schedule import NoiseSchedule, build_schedule, posterior_coefficients

__version__ = "0.1.0"
