"""Spiking gated recurrent cells (Cuba-LIF, SpikGRU and its modified variants) on numpy."""

from .autodiff import SurrogateSpec, Tape, Var
from .bench import ablation_grid, run_experiment
from .cells import ModSet, Network, StepConfig, cuba_lif_step, gru_step, spikgru_step, variant_step
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, PipelineSpec, TaskSpec
from .errors import ConfigError, DataError, ShapeError, TrainingDiverged
from .metrics import accuracy, spiking_activity_rate

__all__ = [
    "ConfigError", "DataError", "ExperimentConfig", "ModSet", "Network", "PipelineSpec", "ShapeError",
    "StepConfig", "SurrogateSpec", "Tape", "TaskSpec", "TrainingDiverged", "Var", "ablation_grid", "accuracy",
    "cuba_lif_step", "gru_step", "load_checkpoint", "run_experiment", "save_checkpoint", "spikgru_step",
    "spiking_activity_rate", "variant_step",
]
