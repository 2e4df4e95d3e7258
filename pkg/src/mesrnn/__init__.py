"""Meta-path enhanced structural RNN toolkit for pedestrian trajectory
prediction: spatio-temporal graph features, a self-contained reverse-mode
differentiation engine, training and leave-one-out evaluation."""

__version__ = "0.1.0"

from .autodiff import GradientStore, Tape, Tensor, grad_check
from .data import SynthSpec, TrajectoryTable, load_table, synth_generate, window_scenes
from .evaluate import PredictionResult, ade, fde, leave_one_out, rollout
from .model import (
    ModelParams,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .stgraph import (
    MetaPathFeature,
    Scene,
    STGraph,
    build_graph,
    enumerate_walks_oracle,
    metapaths,
    spatial_edge,
    temporal_edge,
)
from .training import NormStats, TrainConfig, minmax_fit, train

__all__ = [
    "GradientStore", "Tape", "Tensor", "grad_check",
    "SynthSpec", "TrajectoryTable", "load_table", "synth_generate", "window_scenes",
    "PredictionResult", "ade", "fde", "leave_one_out", "rollout",
    "ModelParams", "init_params", "load_checkpoint", "param_count", "save_checkpoint",
    "MetaPathFeature", "Scene", "STGraph", "build_graph", "enumerate_walks_oracle",
    "metapaths", "spatial_edge", "temporal_edge",
    "NormStats", "TrainConfig", "minmax_fit", "train",
]
