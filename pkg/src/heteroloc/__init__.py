"""Heterogeneous local interaction encoder for multi-agent trajectory prediction.

The pipeline runs scene -> polyline encoder -> multi-scale graphs ->
message passing -> local attention -> anchor decoder, all on a small
reverse-mode autodiff core over numpy.
"""

from .config import ExperimentConfig
from .graphs import GraphConfig, build_multiscale, graph_dump
from .scene import AgentType, Scene, ScenarioKind, ScenarioSpec, generate_synthetic_scene, load_scenes, save_scenes

__all__ = [
    "AgentType",
    "ExperimentConfig",
    "GraphConfig",
    "ScenarioKind",
    "ScenarioSpec",
    "Scene",
    "build_multiscale",
    "generate_synthetic_scene",
    "graph_dump",
    "load_scenes",
    "save_scenes",
]
__version__ = "0.1.0"
