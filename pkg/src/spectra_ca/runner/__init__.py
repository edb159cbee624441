"""Experiment configs, image input, checkpoints and the run driver."""
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, default_config, load_config, parse_config, serialize_config
from .experiments import run
from .images import downsample, load_image, pixel_centers

__all__ = ["Checkpoint", "ExperimentConfig", "default_config", "downsample", "load_checkpoint",
           "load_config", "load_image", "parse_config", "pixel_centers", "run", "save_checkpoint",
           "serialize_config"]
