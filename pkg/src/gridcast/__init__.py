"""Semantics-aware spatiotemporal occupancy-grid prediction."""

from .grid import (
    BeliefMass,
    EOGM,
    GridConfig,
    LabelTable,
    LabelVariant,
    OGM,
    OccClass,
    SMGM,
    classify,
    dst_fuse,
    pignistic,
    rasterize_scan,
)
from .dataset import Dataset, ScenarioConfig, SequenceSample, generate_dataset
from .metrics import dynamic_mse, evaluate, image_similarity, mse
from .sensor import ScanHit, SensorConfig, sense
from .world import AgentState, World, build_world, dynamic_mask, step_world

__all__ = [
    "AgentState", "BeliefMass", "Dataset", "EOGM", "GridConfig", "LabelTable",
    "LabelVariant", "OGM", "OccClass", "SMGM", "ScanHit", "ScenarioConfig",
    "SensorConfig", "SequenceSample", "World", "build_world", "classify",
    "dst_fuse", "dynamic_mask", "dynamic_mse", "evaluate", "generate_dataset",
    "image_similarity", "mse", "pignistic", "rasterize_scan", "sense",
    "step_world",
]

__version__ = "0.1.0"
